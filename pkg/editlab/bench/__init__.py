"""Synthetic coding language, training corpus and edit benchmark"""
