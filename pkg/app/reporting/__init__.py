"""
Run artifact writers (CSV, JSON, potential grids, deflection files)
"""
