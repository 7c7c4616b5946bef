"""
smallpia
========

Policy improvement and gradient iteration for 1-D controlled diffusions,
with a finite-difference reference solver and Monte-Carlo cross-checks.

"""

__version__ = '0.1.dev0'
