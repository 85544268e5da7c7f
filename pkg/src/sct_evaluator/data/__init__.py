"""Volumes, the NIfTI-1 codec and dataset handling."""
