import numpy as np

from poromix.model import compliance_apply


def fd_residuals(case, pts, t, step=1e-6):
    """Max-norm residuals of the four strong equations at (pts, t).

    All derivatives are centered finite differences of the exact-field
    callables, so the load expressions are checked against an independent
    numerical differentiation path.
    """
    pr = case.params
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])

    def ddt(fn):
        return (np.asarray(fn(pts, t + step)) - np.asarray(fn(pts, t - step))) / (2 * step)

    def dsp(fn, e):
        return (np.asarray(fn(pts + e, t)) - np.asarray(fn(pts - e, t))) / (2 * step)

    du, dw, dsig, dp = ddt(case.u), ddt(case.w), ddt(case.sigma), ddt(case.p)
    sig_x, sig_y = dsp(case.sigma, ex), dsp(case.sigma, ey)
    div_sig = np.stack(
        [sig_x[:, 0, 0] + sig_y[:, 0, 1], sig_x[:, 1, 0] + sig_y[:, 1, 1]], axis=1
    )
    grad_p = np.stack([dsp(case.p, ex), dsp(case.p, ey)], axis=1)
    grad_u = np.stack([dsp(case.u, ex), dsp(case.u, ey)], axis=2)
    sym_grad_u = 0.5 * (grad_u + np.swapaxes(grad_u, 1, 2))
    w_x, w_y = dsp(case.w, ex), dsp(case.w, ey)
    div_w = w_x[:, 0] + w_y[:, 1]

    lf = case.loads()
    fv, hv, gv = lf.f(pts, t), lf.h(pts, t), lf.g(pts, t)
    wv = case.w(pts, t)
    kappa = pr.kappa

    eq1 = pr.rho_u * du + pr.rho_f * dw - div_sig - fv
    eq2 = pr.rho_f * du + pr.rho_w * dw + wv @ pr.K_inv + grad_p - hv
    eq3 = (
        compliance_apply(pr, dsig)
        + (pr.alpha / (2.0 * kappa)) * dp[:, None, None] * np.eye(2)
        - sym_grad_u
    )
    eq4 = (
        (pr.s0 + pr.alpha**2 / kappa) * dp
        + (pr.alpha / (2.0 * kappa)) * (dsig[:, 0, 0] + dsig[:, 1, 1])
        + div_w
        - gv
    )
    return {
        "momentum": float(np.max(np.abs(eq1))),
        "darcy": float(np.max(np.abs(eq2))),
        "constitutive": float(np.max(np.abs(eq3))),
        "mass": float(np.max(np.abs(eq4))),
    }
