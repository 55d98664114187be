"""Eco-driving planner and safety cruise controller for signalized corridors."""
