"""Character classifier, presence network, input transforms and training.

Submodules are imported explicitly; ``transforms`` is numpy-only so the
labeling code does not pull in torch.
"""
