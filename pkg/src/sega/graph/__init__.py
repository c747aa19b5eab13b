"""Heterogeneous user/list graph, dataset I/O and the synthetic generator."""
