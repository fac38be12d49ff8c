"""Defense aggregators: the neuron-wise detector and the comparison baselines."""
