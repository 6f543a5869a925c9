#!/usr/bin/env python3
"""
Quick server starter with status check
"""

import uvicorn

from config import get_settings
from database import init_db


def start_server():
    """Start the FastAPI server"""

    print("🚀 Starting IFS Minimality Service")
    print("=" * 60)

    print(f"📊 Initializing run ledger ({get_settings().db_url})...")
    try:
        init_db()
        print("✅ Run ledger ready!")
    except Exception as e:
        print(f"❌ Run ledger initialization failed: {e}")
        return

    print("\n🌐 Available Endpoints:")
    print("   📋 API Documentation: http://localhost:8000/docs")
    print("   🔧 Interactive API: http://localhost:8000/redoc")

    print("\n📡 Computations:")
    print("   POST /api/construct - Parameters of the S, S∘T pair")
    print("   POST /api/check     - Construction inequalities")
    print("   POST /api/certify   - Minimality certificate")
    print("   POST /api/branch    - Dense branch into a target ball")
    print("   POST /api/blender   - Strip refinement check")
    print("   POST /api/mix       - Mixing probe")

    print("\n🗂  Run Ledger:")
    print("   GET  /api/runs      - Recorded runs")
    print("   GET  /api/runs/{id} - One run")

    print("\n" + "=" * 60)
    print("🔥 Starting server on http://localhost:8000")
    print("   Press Ctrl+C to stop the server")
    print("=" * 60)

    try:
        uvicorn.run(
            "main:app",
            host="0.0.0.0",
            port=8000,
            reload=True,
            log_level="info",
        )
    except KeyboardInterrupt:
        print("\n\n👋 Server stopped by user")
    except Exception as e:
        print(f"\n❌ Server error: {e}")


if __name__ == "__main__":
    start_server()
