"""Instances, reference solutions, file I/O and the command line."""

from .examples import RandomInstanceSpec, build_example1, gen_random_instance
