# This file makes tools a proper Python package
