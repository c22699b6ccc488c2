# "optim.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Adam with one constant learning rate per named parameter group, updating numpy arrays in place.

import numpy as np


class Adam:
    """
    An Adam object keeps the first and second moment estimates of every parameter group it has updated.

    Attributes
    ----------
    lrs : dict[str, float]
        Learning rate per group name.
    betas : tuple[float, float]
        Decay rates of the moment estimates.
    eps : float
        Term added to the denominator.
    """
    def __init__(self, lrs: dict[str, float], betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-15):
        for name, lr in lrs.items():
            if lr < 0:
                raise ValueError("Learning rate for '" + name + "' must not be negative.")
        self.lrs = dict(lrs)
        self.betas = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """
        Applies one update to every group that has both a parameter array and a gradient.

        Parameters
        ----------
        params : dict[str, np.ndarray]
            Parameter arrays by group name. They are updated in place.
        grads : dict[str, np.ndarray]
            Gradients by group name, shaped like the parameters.
        """
        beta1, beta2 = self.betas
        for name, grad in grads.items():
            if name not in params or grad is None:
                continue
            if name not in self.lrs:
                raise KeyError("No learning rate set for parameter group '" + name + "'.")
            param = params[name]
            grad = np.asarray(grad, dtype=np.float64).reshape(param.shape)
            if name not in self.m or self.m[name].shape != param.shape:
                self.m[name] = np.zeros(param.shape)
                self.v[name] = np.zeros(param.shape)
                self.t[name] = 0
            self.t[name] += 1
            self.m[name] = beta1 * self.m[name] + (1.0 - beta1) * grad
            self.v[name] = beta2 * self.v[name] + (1.0 - beta2) * grad * grad
            m_hat = self.m[name] / (1.0 - beta1 ** self.t[name])
            v_hat = self.v[name] / (1.0 - beta2 ** self.t[name])
            param -= self.lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)
