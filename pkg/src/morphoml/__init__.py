"""Morphometric feature extraction and gradient-boosted classification
for tissue-core images.

Subpackages and modules:
    cohort          case manifests, labels, stratified splits
    preprocess      patch tiling, background filtering, stain separation
    objectfeatures  per-object shape / intensity / positional features
    aggregate       patch-level feature vectors and registries
    gbdt            focal-loss gradient-boosted trees
    attribution     exact tree-Shapley explanations
    evaluation      weighted metrics, bootstrap CIs, equivalence tests
    synth           synthetic images with analytic ground truth
    pipeline, cli   reproducible end-to-end runs
"""

__version__ = "0.1.0"
