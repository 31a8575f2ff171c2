"""Bayesian spatial GLMMs with Gaussian random field and Laplace moving average priors."""
