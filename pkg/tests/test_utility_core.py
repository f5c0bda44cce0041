import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renewalloc.errors import DomainError, ParameterError
from renewalloc.utility_core import (
    SigmoidUtility,
    UserProfile,
    branch_eval,
    branch_inverse,
    eval_base,
    eval_user,
    log_marginal_user,
    marginal_user,
)

qs = st.floats(0.05, 0.99)
slopes = st.sampled_from([0.1, 0.8, 3.2, 14.0])


class TestEvalBase:
    u = SigmoidUtility(0.5, 1.0, 10.0)

    def test_at_rmid(self):
        assert eval_base(self.u, 10.0) == 0.5

    def test_upper_branch(self):
        assert eval_base(self.u, 10.0 + math.log(2)) == pytest.approx(0.75, rel=1e-15)

    def test_lower_branch(self):
        assert eval_base(self.u, 10.0 - math.log(2)) == pytest.approx(0.25, rel=1e-15)

    @pytest.mark.parametrize("q,p,rmid", [(0.0, 1, 1), (1.2, 1, 1), (0.5, 0, 1), (0.5, -1, 1), (0.5, 1, 0)])
    def test_rejects_bad_parameters(self, q, p, rmid):
        with pytest.raises(ParameterError):
            SigmoidUtility(q, p, rmid)

    def test_rejects_negative_energy(self):
        with pytest.raises(DomainError):
            eval_base(self.u, -1.0)

    def test_vectorised(self):
        x = np.array([0.0, 10.0, 20.0])
        out = eval_base(self.u, x)
        assert out.shape == (3,)
        assert out[1] == 0.5

    @given(qs, slopes, st.floats(1.0, 100.0))
    def test_continuity_at_rmid(self, q, p, rmid):
        lower = q * math.exp(p * (rmid - rmid))
        upper = 1 - (1 - q) * math.exp(-p * (rmid - rmid))
        assert abs(lower - q) <= 1e-15 and abs(upper - q) <= 1e-15
        assert abs(eval_base(SigmoidUtility(q, p, rmid), rmid) - q) <= 1e-15

    @given(qs, slopes, st.floats(0, 1), st.floats(1e-3, 1))
    def test_strictly_increasing(self, q, p, a, b):
        # stay where the step in U is resolvable in double precision
        hi = 10.0 + 20.0 / p
        x1 = a * hi
        x2 = x1 + b * hi + 0.01 / p
        u = SigmoidUtility(q, p, 10.0)
        assert eval_base(u, x1) < eval_base(u, x2)

    @given(qs, slopes)
    def test_asymptotes(self, q, p):
        u = SigmoidUtility(q, p, 10.0)
        assert eval_base(u, 0.0) == pytest.approx(q * math.exp(-p * 10.0), rel=1e-12)
        assert eval_base(u, 10.0 + 50.0 / p) >= 1 - (1 - q) * math.exp(-50) - 1e-16
        assert eval_base(u, 1e6) == 1.0

    def test_no_overflow_with_steep_slope(self):
        u = SigmoidUtility(0.5, 14.0, 10.0)
        with np.errstate(over="raise"):
            assert eval_base(u, 1e5) == 1.0
            assert eval_base(u, 0.0) > 0.0


class TestEvalUser:
    def test_preferred_point(self):
        assert eval_user(UserProfile(0.5, 1.0, 10.0), 20.0) == 0.5

    def test_q_one_saturates_at_rmid(self):
        assert eval_user(UserProfile(1.0, 1.0, 10.0), 10.0) == 1.0

    def test_zero_energy(self):
        assert eval_user(UserProfile(0.8, 0.1, 10.0), 0.0) == pytest.approx(0.8 * math.exp(-1), rel=1e-15)

    @given(qs, slopes, st.floats(0, 500))
    def test_matches_base_in_effective_coordinates(self, q, p, r):
        user = UserProfile(q, p, 10.0)
        assert eval_user(user, r) == eval_base(SigmoidUtility(q, p, 10.0), q * r)

    @given(qs, slopes)
    def test_profile_identities(self, q, p):
        user = UserProfile(q, p, 10.0)
        assert user.rmid_k * q == pytest.approx(10.0, rel=1e-15)
        assert user.m_k > 0
        assert eval_user(user, user.rmid_k) == pytest.approx(q, rel=1e-12)

    def test_peak_marginal_zero_only_for_perfect_channel(self):
        assert UserProfile(1.0, 0.8, 10.0).m_k == 0.0
        assert UserProfile(0.999, 0.8, 10.0).m_k > 0


class TestMarginal:
    def test_symmetric_quality_has_no_jump(self):
        user = UserProfile(0.5, 1.0, 10.0)
        assert marginal_user(user, 20.0) == pytest.approx(0.25, rel=1e-15)
        assert marginal_user(user, 20.0 - 1e-9) == pytest.approx(0.25, rel=1e-8)

    def test_jump_at_rmid(self):
        user = UserProfile(0.8, 1.0, 10.0)
        assert marginal_user(user, 12.5 - 1e-9) == pytest.approx(0.64, rel=1e-8)
        assert marginal_user(user, 12.5 + 1e-9) == pytest.approx(0.16, rel=1e-8)
        # right-hand convention exactly at rmid_k
        assert marginal_user(user, 12.5) == pytest.approx(0.16, rel=1e-15)

    def test_right_hand_value_survives_rounding(self):
        # q * (rmid / q) rounds just below rmid for this q
        user = UserProfile(0.6015625, 0.1, 10.0)
        assert user.q * user.rmid_k < 10.0
        assert marginal_user(user, user.rmid_k) == pytest.approx(user.m_k, rel=1e-15)

    def test_decays_to_zero(self):
        assert marginal_user(UserProfile(0.5, 1.0, 10.0), 1e4) == 0.0

    def test_log_marginal_stays_finite_when_marginal_underflows(self):
        user = UserProfile(0.5, 14.0, 10.0)
        assert marginal_user(user, 1e3) == 0.0
        assert math.isfinite(log_marginal_user(user, 1e3))

    @settings(max_examples=200)
    @given(qs, slopes, st.floats(0.01, 3.0))
    def test_matches_central_differences(self, q, p, frac):
        user = UserProfile(q, p, 10.0)
        h = 1e-6 * user.rmid_k
        r = frac * user.rmid_k
        if abs(r - user.rmid_k) < 10 * h:
            r += 20 * h
        fd = (eval_user(user, r + h) - eval_user(user, r - h)) / (2 * h)
        exact = marginal_user(user, r)
        # skip points where rounding in U (~eps * U / h) swamps the 1e-6 target
        noise = np.finfo(float).eps * eval_user(user, r + h) / h
        if noise > 1e-7 * exact:
            return
        assert fd == pytest.approx(exact, rel=1e-6)

    def test_central_differences_on_fixed_grid(self):
        # deterministic companion to the property above
        checked = 0
        for q in (0.2, 0.5, 0.8):
            user = UserProfile(q, 0.8, 10.0)
            h = 1e-6 * user.rmid_k
            for frac in (0.5, 0.9, 1.1, 1.5, 2.0):
                r = frac * user.rmid_k
                fd = (eval_user(user, r + h) - eval_user(user, r - h)) / (2 * h)
                assert fd == pytest.approx(marginal_user(user, r), rel=1e-6)
                checked += 1
        assert checked == 15


class TestBranch:
    def test_peak(self):
        user = UserProfile(0.5, 1.0, 10.0)
        assert branch_eval(user, 0.0) == 0.25
        assert branch_eval(user, 2.0) == pytest.approx(0.25 * math.exp(-1), rel=1e-15)

    def test_flat_for_perfect_channel(self):
        user = UserProfile(1.0, 1.0, 10.0)
        assert branch_eval(user, 0.0) == 0.0
        assert branch_eval(user, 5.0) == 0.0

    def test_inverse_values(self):
        user = UserProfile(0.5, 1.0, 10.0)
        assert branch_inverse(user, user.m_k) == 0.0
        assert branch_inverse(user, user.m_k * math.exp(-1)) == pytest.approx(2.0, rel=1e-15)

    @pytest.mark.parametrize("u", [0.0, -1.0, 0.2500001])
    def test_inverse_domain(self, u):
        with pytest.raises(DomainError):
            branch_inverse(UserProfile(0.5, 1.0, 10.0), u)

    def test_inverse_empty_domain_for_perfect_channel(self):
        with pytest.raises(DomainError):
            branch_inverse(UserProfile(1.0, 1.0, 10.0), 1e-3)

    @given(qs, st.floats(0.05, 20.0), st.floats(1e-6, 1.0))
    def test_round_trip(self, q, p, frac):
        user = UserProfile(q, p, 10.0)
        u = frac * user.m_k
        assert branch_eval(user, branch_inverse(user, u)) == pytest.approx(u, rel=1e-12)

    @given(qs, slopes, st.floats(0, 100))
    def test_branch_is_marginal_above_rmid(self, q, p, s):
        user = UserProfile(q, p, 10.0)
        assert branch_eval(user, s) == pytest.approx(marginal_user(user, user.rmid_k + s), rel=1e-9, abs=1e-300)

    @given(qs, qs, slopes, st.floats(1e-4, 1.0))
    def test_effective_spread_identity(self, qi, qj, p, frac):
        ui, uj = UserProfile(qi, p, 10.0), UserProfile(qj, p, 10.0)
        level = frac * min(ui.m_k, uj.m_k)
        ri = ui.rmid_k + branch_inverse(ui, level)
        rj = uj.rmid_k + branch_inverse(uj, level)
        lhs = qi * ri - qj * rj
        rhs = math.log(ui.m_k / uj.m_k) / p
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
