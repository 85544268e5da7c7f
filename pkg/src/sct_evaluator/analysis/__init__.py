"""Preprocessing, image metrics, Fréchet distance and segmentation scoring."""
