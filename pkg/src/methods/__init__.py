"""Correspondence methods: particle entropy, spherical harmonics and deformation atlases."""
