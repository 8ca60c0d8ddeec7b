"""
Structured GAN package initialization.
"""
