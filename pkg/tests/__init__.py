import unittest

import numpy as np

from muonbench.linalg import Rng, derive_seed


class MuonbenchTestCase(unittest.TestCase):
    """
    Superclass of test cases containing common utilities.
    """
    random_seed = 123456

    def rng(self, *keys):
        return Rng(derive_seed(self.random_seed, *keys))

    def random_matrix(self, shape, *keys):
        return self.rng(*keys).normal(shape)

    def orthogonal(self, n, *keys):
        q, r = np.linalg.qr(self.random_matrix((n, n), *keys))
        return q * np.sign(np.diag(r))

    def with_spectrum(self, s, rows, cols, *keys):
        """
        A ``rows x cols`` matrix with singular values ``s`` and random
        singular vectors, returned with its factors.
        """
        r = len(s)
        u, _ = np.linalg.qr(self.random_matrix((rows, r), *keys, 0))
        v, _ = np.linalg.qr(self.random_matrix((cols, r), *keys, 1))
        return (u * np.asarray(s)) @ v.T, u, v

    def assertArrayEqual(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        self.assertEqual(x.shape, y.shape)
        self.assertTrue(np.array_equal(x, y), "arrays differ:\n{}\n{}".format(x, y))

    def assertRelClose(self, x, y, rel):
        """
        ``||x - y||_F <= rel * ||y||_F``.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.assertEqual(x.shape, y.shape)
        err = np.linalg.norm(x - y)
        scale = np.linalg.norm(y)
        self.assertLessEqual(err, rel * scale,
                             "relative error {} > {}".format(err / scale if scale else err,
                                                             rel))

    def assertAllClose(self, x, y, atol):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.assertEqual(x.shape, y.shape)
        worst = float(np.max(np.abs(x - y))) if x.size else 0.0
        self.assertLessEqual(worst, atol, "max abs difference {} > {}".format(worst, atol))
