# Command Package
