"""Independent reference implementations used only to check the package.

Nothing here imports from deltascan; every oracle is written from the
underlying definitions so agreement is meaningful evidence.
"""
