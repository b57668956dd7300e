"""Right-continuous step functions (cadlag) with finite breakpoint lists."""
from __future__ import annotations

import numpy as np


class StepFunction:
    """f(x) = values[i] for x in [xs[i], xs[i+1]), y_before to the left."""

    def __init__(self, xs, values, y_before=None):
        xs = np.asarray(xs, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.shape != values.shape:
            raise ValueError("breakpoints and values must be equal-length 1-d")
        if xs.size and np.any(np.diff(xs) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.xs = xs
        self.values = values
        self.y_before = float(values[0] if y_before is None and values.size else
                              (0.0 if y_before is None else y_before))

    @classmethod
    def constant(cls, c):
        return cls(np.array([0.0]), np.array([float(c)]), y_before=float(c))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.xs, x, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], self.y_before)
        return out if out.ndim else float(out)

    def jumps(self):
        """(position, jump size) pairs, including the first breakpoint."""
        left = np.concatenate([[self.y_before], self.values[:-1]])
        sizes = self.values - left
        keep = sizes != 0.0
        return self.xs[keep], sizes[keep]

    def is_nondecreasing(self):
        return bool(np.all(np.diff(np.concatenate([[self.y_before], self.values])) >= 0))

    def restrict(self, lo, hi):
        """Breakpoints inside [lo, hi] with the correct left value."""
        keep = (self.xs > lo) & (self.xs <= hi)
        xs = np.concatenate([[lo], self.xs[keep]])
        vals = np.concatenate([[float(self(lo))], self.values[keep]])
        return StepFunction(xs, vals, y_before=float(self(lo)))

    def completed_graph(self):
        """Vertices of the completed graph (verticals filled in)."""
        pts = [(self.xs[0], self.y_before)] if self.xs.size else []
        for x, v in zip(self.xs, self.values):
            prev = pts[-1][1] if pts else v
            if pts and pts[-1][0] != x:
                pts.append((x, prev))
            if not pts or pts[-1][1] != v:
                pts.append((x, v))
        return np.array(pts, dtype=float)
