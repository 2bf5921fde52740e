"""Magnetic Schrodinger equation: forward solver, Carleman weights and stability experiments."""
