"""Keyword-spotting robustness toolkit.

End-to-end pieces for the classic wake-word recipe: a synthetic corpus
generator, SIR-controlled corruption of training audio with reverberated
interference, a log-mel frontend, a small multitask DNN acoustic model, an
HMM/FST keyword decoder, and DET/AUC evaluation.
"""

__version__ = "0.1.0"
