"""Numerical checks of the identities and bounds behind the estimators.

Every check walks a seeded instance family and reports the largest
violation seen. Violations are made scale-free by dividing by
``max(1, |reference|)`` for the quantity involved, so one tolerance serves
all instances. A failing check keeps the worst instance as its witness.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    brm_design,
    design_system,
    lds_model,
    lds_sample,
    lds_solve,
    lstd_design,
    lstd_pinv_design,
    lstd_sample,
    quadratic_form_k,
    td_iterate_design,
)
from .exceptions import ConfigError, SingularGram, SingularSystem
from .instances import instance_family
from .mrp import exact_value, sample_trajectory
from .projections import complementarity_check, oblique_projection, weighted_projection
from .serialization import dumps


@dataclass
class CheckReport:
    check_id: str
    instances_run: int
    max_violation: float
    tolerance: float
    passed: bool
    asserted: bool = True
    witness: dict | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"check_id": self.check_id, "instances_run": self.instances_run,
                "max_violation": self.max_violation, "tolerance": self.tolerance,
                "passed": self.passed, "asserted": self.asserted,
                "vacuous": self.instances_run == 0,
                "witness": self.witness, "details": self.details}

    def to_json(self):
        return dumps(self.to_dict())


class _Tracker:
    def __init__(self, check_id, tolerance, asserted=True):
        self.check_id = check_id
        self.tolerance = tolerance
        self.asserted = asserted
        self.count = 0
        self.worst = 0.0
        self.witness = None
        self.details = {}

    def record(self, violation, witness, threshold=None):
        """``witness`` is a zero-argument callable, evaluated only when needed."""
        violation = float(violation)
        if np.isnan(violation):
            violation = np.inf
        limit = self.tolerance if threshold is None else threshold
        if violation > self.worst:
            self.worst = violation
            if violation > limit:
                self.witness = witness()

    def report(self):
        passed = self.worst <= self.tolerance
        return CheckReport(self.check_id, self.count, self.worst, self.tolerance, passed,
                           self.asserted, self.witness if not passed or not self.asserted
                           else None, self.details)


def _wnorm(v, xi):
    return float(np.sqrt(np.sum(xi * v * v)))


def _rel(diff, ref):
    return float(np.max(np.abs(diff), initial=0.0) / max(1.0, np.max(np.abs(ref), initial=0.0)))


def _lmat(inst):
    return np.eye(inst.mrp.n_states) - inst.mrp.discount * inst.mrp.transition


def _witness(inst, **extra):
    return lambda: {**inst.to_dict(), **{k: np.asarray(v).tolist() if isinstance(v, np.ndarray)
                                         else v for k, v in extra.items()}}


def _summary(values):
    if not values:
        return {}
    a = np.asarray(values, dtype=np.float64)
    return {"min": float(a.min()), "median": float(np.median(a)), "max": float(a.max())}


# ---------------------------------------------------------------------------

def check_rank_implication(count=200, seed=0, family="mixed"):
    """sigma_min(Phi' Xi L Phi) > 1e-10 sigma_max, transient states included."""
    t = _Tracker("rank_implication", 0.0)
    ratios = []
    n_transient = 0
    for inst in instance_family(family, count, seed):
        t.count += 1
        n_transient += inst.n_transient > 0
        m = (inst.phi.T * inst.xi.weights) @ _lmat(inst) @ inst.phi
        s = np.linalg.svd(m, compute_uv=False)
        ratio = s[-1] / s[0] if s[0] > 0 else 0.0
        ratios.append(ratio)
        t.record(max(0.0, 1e-10 - ratio), _witness(inst, singular_values=s))
    t.details = {"sv_ratio": _summary(ratios), "instances_with_transients": n_transient}
    return t.report()


def check_spectral_radius(count=200, seed=0, family="mixed"):
    """rho(gamma Pi P) < 1 under stationary weights.

    The same radius under arbitrary positive weights is only logged.
    """
    t = _Tracker("spectral_radius", 0.0)
    rhos, rhos_any = [], []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    for inst in instance_family(family, count, seed):
        t.count += 1
        g, p = inst.mrp.discount, inst.mrp.transition
        proj = weighted_projection(inst.phi, inst.xi).projector
        rho = float(np.max(np.abs(np.linalg.eigvals(g * proj @ p))))
        rhos.append(rho)
        # strict inequality, with a margin for rounding in eigvals
        t.record(max(0.0, rho - (1.0 - 1e-12)), _witness(inst, rho=rho))
        w_any = rng.uniform(0.01, 1.0, inst.mrp.n_states)
        try:
            proj_any = weighted_projection(inst.phi, w_any / w_any.sum()).projector
            rhos_any.append(float(np.max(np.abs(np.linalg.eigvals(g * proj_any @ p)))))
        except SingularGram:
            pass
    t.details = {"rho": _summary(rhos), "rho_arbitrary_weights": _summary(rhos_any),
                 "arbitrary_weights_at_or_above_one": int(sum(r >= 1.0 for r in rhos_any))}
    return t.report()


def check_oblique_complementarity(count=200, seed=0, family="mixed"):
    """C(A Phi)^perp and C(B Phi) complementary for both LSTD substitutions."""
    t = _Tracker("oblique_complementarity", 0.0)
    certs = []
    for inst in instance_family(family, count, seed):
        t.count += 1
        ell = _lmat(inst)
        xi = inst.xi.matrix
        eye = np.eye(inst.mrp.n_states)
        worst = 0.0
        for a, b in ((eye, ell.T @ xi), (ell, xi)):
            ok, cert = complementarity_check(a, b, inst.phi)
            certs.append(cert)
            worst = max(worst, 0.0 if ok else 1.0)
        t.record(worst, _witness(inst))
    t.details = {"certificate": _summary(certs)}
    return t.report()


def _well_conditioned(rng, k, max_cond=1e4):
    q1, _ = np.linalg.qr(rng.standard_normal((k, k)))
    q2, _ = np.linalg.qr(rng.standard_normal((k, k)))
    s = np.exp(rng.uniform(0.0, np.log(max_cond), k))
    return q1 @ np.diag(s) @ q2


def check_basis_invariance(count=200, seed=0, family="mixed", n_samples=1000):
    """Sample LSTD values unchanged under Phi -> Phi C.

    C runs over a random well-conditioned matrix, a permutation and 2I.
    The largest discrepancy under pure scaling is reported separately.
    """
    t = _Tracker("basis_invariance", 1e-8)
    skipped, scaling = 0, 0.0
    for i, inst in enumerate(instance_family(family, count, seed)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, 2]))
        traj = sample_trajectory(inst.mrp, inst.fmap, n_samples, seed=rng)
        g = inst.mrp.discount
        try:
            base = lstd_sample(traj, g)
        except SingularSystem:
            skipped += 1
            continue
        t.count += 1
        v = traj.features @ base.w
        k = inst.fmap.n_features
        worst = 0.0
        for name, c in (("random", _well_conditioned(rng, k)),
                        ("permutation", np.eye(k)[rng.permutation(k)]),
                        ("scaling", 2.0 * np.eye(k))):
            other = traj.with_features(inst.phi @ c)
            try:
                w_c = lstd_sample(other, g).w
            except SingularSystem:
                continue
            gap = _rel(other.features @ w_c - v, v)
            worst = max(worst, gap)
            if name == "scaling":
                scaling = max(scaling, gap)
        t.record(worst, _witness(inst, trajectory_seed=[seed, i, 2]))
    t.details = {"scaling_max_violation": scaling, "skipped_singular": skipped}
    return t.report()


def check_error_bound(count=200, seed=0, family="mixed", near_one=None):
    """||V - Phi w||_Xi <= (1 - gamma^2)^-1/2 ||V - Pi V||_Xi.

    ``near_one`` extra instances (default count // 4) are drawn with gamma = 0.999.
    """
    if near_one is None:
        near_one = count // 4
    t = _Tracker("error_bound", 1e-10)
    ratios, ratios_near = [], []
    fams = [(instance_family(family, count, seed), ratios),
            (instance_family(family, near_one, seed + 1, gamma=0.999), ratios_near)]
    for insts, sink in fams:
        for inst in insts:
            t.count += 1
            xi = inst.xi.weights
            v = exact_value(inst.mrp)
            w = lstd_design(inst.mrp, inst.fmap, inst.xi).w
            g = inst.mrp.discount
            lhs = _wnorm(v - inst.phi @ w, xi)
            pv = weighted_projection(inst.phi, xi)(v)
            rhs = _wnorm(v - pv, xi) / np.sqrt(1.0 - g * g)
            if rhs > 0:
                sink.append(lhs / rhs)
            t.record(max(0.0, lhs - rhs) / max(1.0, _wnorm(v, xi)),
                     _witness(inst, lhs=lhs, rhs=rhs))
    t.details = {"tightness": _summary(ratios), "tightness_gamma_0999": _summary(ratios_near)}
    return t.report()


def check_loss_decomposition(count=200, seed=0, family="mixed", n_weights=20):
    """||Phi w - Pi T Phi w||^2 = ||Phi w - T Phi w||^2 - ||Pi T Phi w - T Phi w||^2.

    Also: the inner least-squares minimiser h*(w) equals the projection
    coefficients of T Phi w, and at w_lstd the left side vanishes.
    """
    t = _Tracker("loss_decomposition", 1e-9)
    nested = at_lstd = 0.0
    for i, inst in enumerate(instance_family(family, count, seed)):
        t.count += 1
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, 3]))
        xi = inst.xi.weights
        phi = inst.phi
        proj = weighted_projection(phi, xi)
        root = np.sqrt(xi)[:, None]
        r, p, g = inst.mrp.mean_reward, inst.mrp.transition, inst.mrp.discount
        ws = list(rng.standard_normal((n_weights, phi.shape[1])))
        w_lstd = lstd_design(inst.mrp, inst.fmap, inst.xi).w
        worst = 0.0
        for j, w in enumerate(ws + [w_lstd]):
            fw = phi @ w
            tw = r + g * (p @ fw)
            ptw = proj(tw)
            lhs = _wnorm(fw - ptw, xi) ** 2
            rhs = _wnorm(fw - tw, xi) ** 2 - _wnorm(ptw - tw, xi) ** 2
            scale = max(1.0, _wnorm(fw, xi) ** 2 + _wnorm(tw, xi) ** 2)
            worst = max(worst, abs(lhs - rhs) / scale)
            h_ls, *_ = np.linalg.lstsq(root * phi, root[:, 0] * tw, rcond=None)
            h_gap = _rel(h_ls - proj.coefficients(tw), h_ls)
            nested = max(nested, h_gap)
            worst = max(worst, h_gap)
            if j == len(ws):
                at_lstd = max(at_lstd, lhs / scale)
                worst = max(worst, lhs / scale)
        t.record(worst, _witness(inst))
    t.details = {"nested_minimiser_gap": nested, "lhs_at_lstd": at_lstd}
    return t.report()


def check_td_orthogonality(count=200, seed=0, family="mixed"):
    """Phi' Xi delta = 0 for the TD error delta at the LSTD solution."""
    t = _Tracker("td_orthogonality", 1e-9)
    for inst in instance_family(family, count, seed):
        t.count += 1
        s = design_system(inst.mrp, inst.fmap, inst.xi)
        w = lstd_design(inst.mrp, inst.fmap, inst.xi).w
        delta = s.td_error(w)
        resid = np.max(np.abs((s.x.T * s.weights) @ delta))
        scale = np.max(np.abs(s.x)) * (np.max(np.abs(s.rewards))
                                       + (1 + s.gamma) * np.max(np.abs(s.x @ w)))
        t.record(resid / max(scale, 1e-300), _witness(inst, w=w))
    return t.report()


def check_oblique_recovery(count=200, seed=0, family="mixed"):
    """Both oblique-projection routes reproduce the LSTD solution.

    X = L Phi, Y = Xi Phi maps r to L Phi w; X = Phi, Y = L' Xi Phi maps V to Phi w.
    """
    t = _Tracker("oblique_recovery", 1e-8)
    for inst in instance_family(family, count, seed):
        t.count += 1
        ell = _lmat(inst)
        xi_phi = inst.xi.weights[:, None] * inst.phi
        v = exact_value(inst.mrp)
        fw = inst.phi @ lstd_design(inst.mrp, inst.fmap, inst.xi).w
        first = oblique_projection(ell @ inst.phi, xi_phi)(inst.mrp.mean_reward)
        second = oblique_projection(inst.phi, ell.T @ xi_phi)(v)
        t.record(max(_rel(first - ell @ fw, ell @ fw), _rel(second - fw, v)), _witness(inst))
    return t.report()


def check_brm_oblique_form(count=200, seed=0, family="mixed"):
    """Phi w_B = Phi (Phi' L' Xi Phi)^-1 Phi' L' Xi T Phi w_B."""
    t = _Tracker("brm_oblique_form", 1e-8)
    for inst in instance_family(family, count, seed):
        t.count += 1
        w_b = brm_design(inst.mrp, inst.fmap, inst.xi).w
        fw = inst.phi @ w_b
        tw = inst.mrp.mean_reward + inst.mrp.discount * (inst.mrp.transition @ fw)
        xi_l_phi = inst.xi.weights[:, None] * (_lmat(inst) @ inst.phi)
        image = oblique_projection(inst.phi, xi_l_phi)(tw)
        t.record(_rel(image - fw, fw), _witness(inst, w=w_b))
    return t.report()


def check_design_agreement(count=200, seed=0, family="mixed"):
    """lstd_design, LDS value, quadratic-form minimiser and expected TD agree."""
    t = _Tracker("design_agreement", 1e-8)
    iters = []
    for inst in instance_family(family, count, seed):
        t.count += 1
        ref = lstd_design(inst.mrp, inst.fmap, inst.xi).w
        f, q = lds_model(inst.mrp, inst.fmap, inst.xi)
        lds = lds_solve(f, q, inst.mrp.discount).w
        qf = quadratic_form_k(inst.mrp, inst.fmap, inst.xi)[1].w
        td_est, _ = td_iterate_design(inst.mrp, inst.fmap, inst.xi)
        iters.append(td_est.diagnostics["iterations"])
        gap = max(_rel(x - ref, ref) for x in (lds, qf, td_est.w))
        t.record(gap, _witness(inst, lstd=ref, lds=lds, quadratic_form=qf, td=td_est.w))
    t.details = {"td_iterations": _summary(iters)}
    return t.report()


def check_sample_agreement(count=200, seed=0, family="mixed", n_samples=1000):
    """lstd_sample and lds_sample give the same weights on one trajectory."""
    t = _Tracker("sample_agreement", 1e-9)
    skipped = 0
    for i, inst in enumerate(instance_family(family, count, seed)):
        traj = sample_trajectory(inst.mrp, inst.fmap, n_samples,
                                 seed=np.random.SeedSequence([seed, i, 4]))
        try:
            a = lstd_sample(traj, inst.mrp.discount).w
            b = lds_sample(traj, inst.mrp.discount)[2].w
        except (SingularSystem, SingularGram):
            skipped += 1
            continue
        t.count += 1
        t.record(_rel(a - b, a), _witness(inst, trajectory_seed=[seed, i, 4]))
    t.details = {"skipped_singular": skipped}
    return t.report()


def check_tabular_exactness(count=200, seed=0, family="tabular"):
    """With identity features every design estimator returns V."""
    t = _Tracker("tabular_exactness", 1e-8)
    for inst in instance_family(family, count, seed):
        t.count += 1
        v = exact_value(inst.mrp)
        m, fm, xi = inst.mrp, inst.fmap, inst.xi
        f, q = lds_model(m, fm, xi)
        ws = [lstd_design(m, fm, xi).w, brm_design(m, fm, xi).w,
              lds_solve(f, q, m.discount).w, td_iterate_design(m, fm, xi)[0].w,
              quadratic_form_k(m, fm, xi)[1].w]
        t.record(max(_rel(w - v, v) for w in ws), _witness(inst))
    return t.report()


def _augment(rng, phi, mode):
    k = phi.shape[1]
    if mode == "zero":
        extra = np.zeros(phi.shape[0])
    elif mode == "sum" and k >= 2:
        i, j = rng.choice(k, 2, replace=False)
        extra = phi[:, i] + phi[:, j]
    else:
        extra = phi[:, rng.integers(k)]
    cols = np.column_stack([phi, extra])
    return cols[:, rng.permutation(k + 1)]


def check_pinv_value_equivalence(count=200, seed=0, family="random"):
    """Pseudo-inverse LSTD on dependent columns gives the reduced-basis values."""
    t = _Tracker("pinv_value_equivalence", 1e-8)
    modes = ("duplicate", "zero", "sum")
    for i, inst in enumerate(instance_family(family, count, seed)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, 5]))
        t.count += 1
        mode = modes[i % 3]
        phi_aug = _augment(rng, inst.phi, mode)
        v_ref = inst.phi @ lstd_design(inst.mrp, inst.fmap, inst.xi).w
        v_pinv = phi_aug @ lstd_pinv_design(inst.mrp, phi_aug, inst.xi).w
        t.record(_rel(v_pinv - v_ref, v_ref), _witness(inst, augmented_features=phi_aug,
                                                        mode=mode))
    return t.report()


def _conjecture_case(rng, case):
    n = int(rng.integers(4, 9))
    k = int(rng.integers(1, 4))
    x0 = rng.standard_normal((n, k))
    if case == "invertible":
        c = rng.standard_normal((k, k))
        return x0, rng.standard_normal((n, k)), c
    if case == "scaling":
        return x0, rng.standard_normal((n, k)), 2.0 * np.eye(k)
    if case == "selector":
        x = np.column_stack([x0, x0[:, rng.integers(k)]])
        return x, rng.standard_normal((n, k + 1)), np.eye(k + 1)[:, :k]
    if case == "mixing":
        m = k + int(rng.integers(1, 3))
        x = x0 @ rng.standard_normal((k, m))
        return x, rng.standard_normal((n, m)), rng.standard_normal((m, k))
    # rank-deficient cross: fewer test directions than the column space
    m = k + 1
    x = x0 @ rng.standard_normal((k, m))
    y = rng.standard_normal((n, max(k - 1, 1)))
    return x, y, rng.standard_normal((m, k))


CONJECTURE_CASES = ("invertible", "scaling", "selector", "mixing", "thin_test_space")
CONJECTURE_FLAG = 1e-8


def check_oblique_conjecture(count=200, seed=0, family=None):
    """Probe X (Y'X)^+ Y' == XC (Y'XC)^+ Y' for C with C(XC) = C(X). Not asserted."""
    t = _Tracker("oblique_conjecture", np.inf, asserted=False)
    per_case = {c: 0.0 for c in CONJECTURE_CASES}
    # max gap split by whether rank(Y'X) == rank(X)
    by_cross_rank = {"full": 0.0, "deficient": 0.0}
    flagged = 0
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, 6]))
        case = CONJECTURE_CASES[i % len(CONJECTURE_CASES)]
        x, y, c = _conjecture_case(rng, case)
        xc = x @ c
        if np.linalg.matrix_rank(xc) != np.linalg.matrix_rank(x):
            continue  # C lost part of the column space; not a valid probe
        t.count += 1
        p = oblique_projection(x, y, use_pinv=True).projector
        p_c = oblique_projection(xc, y, use_pinv=True).projector
        gap = float(np.linalg.norm(p - p_c) / max(1.0, np.linalg.norm(p)))
        per_case[case] = max(per_case[case], gap)
        key = "full" if np.linalg.matrix_rank(y.T @ x) == np.linalg.matrix_rank(x) else "deficient"
        by_cross_rank[key] = max(by_cross_rank[key], gap)
        flagged += gap > CONJECTURE_FLAG
        t.record(gap, lambda x=x, y=y, c=c, case=case: {
            "case": case, "x": x.tolist(), "y": y.tolist(), "c": c.tolist()},
            threshold=CONJECTURE_FLAG)
    t.details = {"per_case_max": per_case, "cross_rank_max": by_cross_rank,
                 "flag_threshold": CONJECTURE_FLAG,
                 "flagged": int(flagged)}
    return t.report()


CHECKS = {
    "rank_implication": check_rank_implication,
    "spectral_radius": check_spectral_radius,
    "oblique_complementarity": check_oblique_complementarity,
    "basis_invariance": check_basis_invariance,
    "error_bound": check_error_bound,
    "loss_decomposition": check_loss_decomposition,
    "oblique_conjecture": check_oblique_conjecture,
    "pinv_value_equivalence": check_pinv_value_equivalence,
    "td_orthogonality": check_td_orthogonality,
    "oblique_recovery": check_oblique_recovery,
    "brm_oblique_form": check_brm_oblique_form,
    "design_agreement": check_design_agreement,
    "sample_agreement": check_sample_agreement,
    "tabular_exactness": check_tabular_exactness,
}


def resolve_suite(selection):
    """'all', a comma-separated string or a list of ids -> sorted unique ids."""
    if selection is None or selection == "all":
        return sorted(CHECKS)
    if isinstance(selection, str):
        selection = [s.strip() for s in selection.split(",") if s.strip()]
    ids = []
    for s in selection:
        if s == "all":
            ids.extend(CHECKS)
        elif s not in CHECKS:
            raise ConfigError(f"unknown check id {s!r}; known: {', '.join(sorted(CHECKS))}")
        else:
            ids.append(s)
    return sorted(set(ids))


def run_suite(selection="all", count=200, seed=0, timings=False):
    """Run the selected checks; reports come back sorted by check id."""
    if count < 0:
        raise ConfigError("count must be non-negative")
    reports = []
    for cid in resolve_suite(selection):
        start = time.perf_counter()
        rep = CHECKS[cid](count=count, seed=seed)
        if timings:
            rep.details["seconds"] = time.perf_counter() - start
        reports.append(rep)
    return reports


def suite_passed(reports):
    return all(r.passed for r in reports if r.asserted)

