"""Path-dependent exploratory mean-variance portfolio toolkit.

Subpackages: ``marketdata`` (prices and estimation), ``similarity`` and
``clustering`` (asset selection), ``market`` and ``policy`` (exploratory
dynamics), ``nn`` and ``hjb_solver`` (value network training),
``backtest`` and ``cli``.
"""

__version__ = "0.1.0"
