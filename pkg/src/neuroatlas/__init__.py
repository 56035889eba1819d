"""neuroatlas: a relational catalog and query layer for heterogeneous
neuroimaging datasets (scan trees + CSV clinical variables + dictionaries)."""

__version__ = "0.1.0"
