# This file makes the commands directory a Python package
