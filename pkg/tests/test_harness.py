import math
import unittest
from dataclasses import replace

import numpy as np

from muonbench.errors import ConfigError, NumericError, RangeError
from muonbench.harness import (
    EvalRow,
    RateCheckSpec,
    RunRecord,
    TrainConfig,
    loss_spike_count,
    rate_check,
    rate_check_config,
    run_rate_check,
    smoothed_losses,
    tokens_to_target,
    train,
)
from muonbench.optim import AdamWHyper, MuonHyper
from muonbench.tasks import MlpSpec, QuadraticSpec

from tests import MuonbenchTestCase
from tests.oracles import constant_stream, gd_stream


def quadratic_config(**changes):
    config = TrainConfig(task='quadratic', total_steps=200, batch_size=16,
                         eval_every=10, seed=7)
    return replace(config, **changes)


def rows_from_losses(losses, batch_size=1):
    return [EvalRow(step=t, tokens_seen=t * batch_size, train_loss=l, val_loss=l,
                    grad_global_norm=0.0, update_rms=0.0, eta_t=0.0)
            for t, l in enumerate(losses, start=1)]


class TrainTestCase(MuonbenchTestCase):

    def test_loss_decreases(self):
        for optimizer in ('muon', 'adamw'):
            record = train(quadratic_config(optimizer=optimizer,
                                            muon=MuonHyper(eta0=0.05),
                                            adamw=AdamWHyper(eta0=0.01)))
            self.assertFalse(record.summary.diverged)
            self.assertLess(record.summary.final_val_loss,
                            0.5 * record.summary.initial_val_loss)

    def test_rows(self):
        config = quadratic_config(total_steps=95, eval_every=10, batch_size=24)
        record = train(config)
        self.assertEqual(len(record.rows), 9)
        for i, row in enumerate(record.rows):
            self.assertEqual(row.step, 10 * (i + 1))
            self.assertEqual(row.tokens_seen, row.step * 24)
            self.assertEqual(row.wall_ms, 0.0)
            self.assertTrue(math.isfinite(row.grad_global_norm))
            self.assertGreater(row.update_rms, 0.0)
        self.assertEqual(record.run_id, 'muon-B24')
        self.assertEqual(record.summary.state_scalar_count, 16 * 8)
        self.assertIsNone(record.summary.tokens_to_target)
        self.assertFalse(record.summary.terminated)

    def test_adamw_state_is_twice_muon(self):
        muon = train(quadratic_config(total_steps=10))
        adamw = train(quadratic_config(total_steps=10, optimizer='adamw'))
        self.assertEqual(adamw.summary.state_scalar_count,
                         2 * muon.summary.state_scalar_count)

    def test_deterministic(self):
        a = train(quadratic_config())
        b = train(quadratic_config())
        self.assertEqual(a.rows, b.rows)
        self.assertEqual(a.summary, b.summary)
        c = train(quadratic_config(seed=8))
        self.assertNotEqual(a.rows, c.rows)

    def test_data_seed_fixes_dataset(self):
        a = quadratic_config(seed=1, data_seed=5).build_task()
        b = quadratic_config(seed=2, data_seed=5).build_task()
        self.assertArrayEqual(a.a, b.a)
        c = quadratic_config(seed=5).build_task()
        self.assertArrayEqual(a.b, c.b)

    def test_reaches_target(self):
        config = quadratic_config(quadratic=QuadraticSpec(gradient_mode='exact'),
                                  muon=MuonHyper(eta0=0.05, weight_decay=0.0),
                                  total_steps=600)
        optimum = config.build_task().optimum_loss()
        record = train(replace(config, target_loss=1.05 * optimum))
        self.assertTrue(record.summary.terminated)
        self.assertEqual(record.summary.tokens_to_target,
                         record.summary.steps_to_target * 16)
        self.assertLessEqual(record.summary.final_val_loss, 1.05 * optimum)

    def test_early_stop_is_prefix(self):
        config = quadratic_config(quadratic=QuadraticSpec(gradient_mode='exact'),
                                  muon=MuonHyper(eta0=0.05), total_steps=400)
        target = 1.5 * config.build_task().optimum_loss()
        full = train(replace(config, target_loss=target))
        stopped = train(replace(config, target_loss=target,
                                stop_rule='tokens_to_target'))
        self.assertTrue(stopped.summary.terminated)
        self.assertLess(len(stopped.rows), len(full.rows))
        self.assertEqual(stopped.rows, full.rows[:len(stopped.rows)])
        self.assertEqual(stopped.summary.tokens_to_target,
                         full.summary.tokens_to_target)
        self.assertEqual(stopped.rows[-1].step, stopped.summary.steps_to_target)

    def test_divergence(self):
        record = train(quadratic_config(muon=MuonHyper(eta0=100.0)))
        self.assertTrue(record.summary.diverged)
        self.assertLess(len(record.rows), 20)

    def test_benchmark_timings(self):
        record = train(quadratic_config(total_steps=50, benchmark=True))
        walls = [r.wall_ms for r in record.rows]
        self.assertGreater(walls[0], 0.0)
        self.assertEqual(walls, sorted(walls))
        self.assertEqual(set(record.summary.timings),
                         {'gradients', 'optimizer', 'evaluating', 'step_ms'})
        self.assertGreater(record.summary.timings['step_ms'], 0.0)

    def test_float32(self):
        record = train(quadratic_config(precision='f32'))
        self.assertFalse(record.summary.diverged)
        self.assertTrue(all(math.isfinite(r.val_loss) for r in record.rows))
        self.assertLess(record.summary.final_val_loss, record.summary.initial_val_loss)

    def test_mlp(self):
        mlp = MlpSpec(input_dim=8, hidden=(16, 16), classes=4, samples=200)
        record = train(TrainConfig(task='mlp', mlp=mlp, total_steps=50, eval_every=10,
                                   batch_size=16))
        self.assertEqual(len(record.rows), 5)
        self.assertEqual(record.summary.state_scalar_count, 8 * 16 + 16 * 16 + 16 * 4)
        self.assertLess(record.summary.final_val_loss, record.summary.initial_val_loss)

    def test_invalid_config(self):
        for changes, path in (({'task': 'lm'}, 'task'),
                              ({'batch_size': 0}, 'batch_size'),
                              ({'precision': 'bf16'}, 'precision'),
                              ({'stop_rule': 'tokens_to_target'}, 'target_loss')):
            with self.assertRaises(ConfigError) as cm:
                train(quadratic_config(**changes))
            self.assertIn(path, str(cm.exception))


class MeasurementTestCase(MuonbenchTestCase):

    def test_smoothed_losses(self):
        rows = rows_from_losses([4.0, 2.0, 0.0, 2.0])
        self.assertEqual(smoothed_losses(rows, 2), [4.0, 3.0, 1.0, 1.0])
        self.assertEqual(smoothed_losses(rows, 1), [4.0, 2.0, 0.0, 2.0])
        self.assertEqual(smoothed_losses([], 3), [])

    def test_tokens_to_target(self):
        rows = rows_from_losses([3.0, 2.0, 1.0, 0.5, 0.2], batch_size=8)
        self.assertEqual(tokens_to_target(rows, 1.0, 1), (24, 3))
        self.assertEqual(tokens_to_target(rows, 1.0, 2), (32, 4))
        self.assertEqual(tokens_to_target(rows, 0.1, 1), (None, None))

    def test_tokens_to_target_looks_back_only(self):
        rows = rows_from_losses([3.0, 2.0, 1.0, 0.5, 0.2, 9.0, 9.0])
        hit = tokens_to_target(rows, 1.2, 3)
        self.assertEqual(hit, tokens_to_target(rows[:hit[1]], 1.2, 3))

    def test_loss_spike_count(self):
        rows = rows_from_losses([1.0, 0.5, 0.7, 0.6, 2.0])
        self.assertEqual(loss_spike_count(rows), 2)
        self.assertEqual(loss_spike_count(rows, 1.5), 1)
        self.assertEqual(loss_spike_count(rows_from_losses([3.0, 2.0, 1.0])), 0)
        record = RunRecord('r', 'muon', 1, rows=rows)
        self.assertEqual(loss_spike_count(record), 2)
        self.assertRaises(RangeError, loss_spike_count, rows[:1])


class RateCheckTestCase(MuonbenchTestCase):

    def test_finite_sum_has_slope_minus_one(self):
        rows = constant_stream(50, norm=0.0)
        rows[0].grad_global_norm = 1.0
        self.assertAlmostEqual(rate_check(rows), -1.0, places=10)

    def test_constant_stream(self):
        self.assertAlmostEqual(rate_check(constant_stream(40, 2.0)), 0.0, places=10)

    def test_inverse_sqrt_decay(self):
        rows = constant_stream(2000)
        for row in rows:
            row.grad_global_norm = row.step ** -0.25
        self.assertLess(abs(rate_check(rows) + 0.5), 0.05)

    def test_gradient_descent(self):
        task = QuadraticSpec(gradient_mode='exact').build(self.rng(1))
        eta = 1.0 / (np.linalg.norm(task.a, 2) ** 2 + task.lambda_reg)
        slope = rate_check(gd_stream(task, eta, 200))
        self.assertLess(slope, -0.5)
        self.assertGreater(slope, -1.0 - 1e-9)

    def test_burn_in_and_minimum(self):
        rows = constant_stream(25)
        self.assertRaises(RangeError, rate_check, rows[:19])
        self.assertRaises(RangeError, rate_check, rows, 6)
        self.assertAlmostEqual(rate_check(rows, 5), 0.0, places=10)

    def test_rate_check_config(self):
        config = rate_check_config(quadratic_config(stop_rule='fixed_steps'), 3)
        self.assertEqual(config.schedule.kind, 'inverse_sqrt')
        self.assertEqual(config.eval_every, 1)
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.muon.weight_decay, 0.0)
        self.assertEqual(config.run_id, 'muon-rate-s3')

    def test_muon_on_noisy_quadratic(self):
        spec = QuadraticSpec(rows=64, fan_in=8, fan_out=8, gradient_mode='exact',
                             gradient_noise=0.05)
        config = TrainConfig(task='quadratic', quadratic=spec,
                             muon=MuonHyper(eta0=0.2), total_steps=400)
        result = run_rate_check(config, RateCheckSpec(seeds=[0, 1, 2, 3, 4]))
        self.assertEqual(len(result.slopes), 5)
        self.assertEqual(len(result.records), 5)
        self.assertEqual(len(result.records[0].rows), 400)
        self.assertLessEqual(result.mean_slope, -0.4)
        self.assertTrue(result.passed)

    def test_diverging_run_is_an_error(self):
        config = quadratic_config(muon=MuonHyper(eta0=1000.0), total_steps=40)
        self.assertRaises(NumericError, run_rate_check, config, RateCheckSpec(seeds=[0]))

    def test_spec_validation(self):
        self.assertRaises(ConfigError, RateCheckSpec(seeds=[]).validate)
        self.assertRaises(ConfigError, RateCheckSpec(burn_in=-1).validate)


if __name__ == '__main__':
    unittest.main()
