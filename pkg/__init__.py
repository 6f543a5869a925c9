# This file makes the project directory a Python package
