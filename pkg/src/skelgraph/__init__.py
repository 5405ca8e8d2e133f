"""Graph representations of 3D data: conversion, skeletonization, features and models."""

__version__ = "0.1.0"
