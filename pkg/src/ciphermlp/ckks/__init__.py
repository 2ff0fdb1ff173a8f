"""Desk-scale leveled CKKS backend over machine-word RNS limbs."""
