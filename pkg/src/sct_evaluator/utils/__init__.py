"""Seeded selection and provenance hashing."""
