#!/usr/bin/env python3
"""Independent reference values for the C++ tests.

Everything here is evaluated with mpmath at 50 digits using the textbook
formulas (no log-domain tricks, no stable quadratic roots), so agreement with
the C++ code is a check on both the algebra and the numerics.

Run:  python3 tests/oracles/derive_values.py
"""
import math

from mpmath import mp, mpf, exp, log, sqrt, sin, cos, quad, binomial

mp.dps = 50
EPS = mpf("1e-7")


def clamp(p):
    return min(max(p, EPS), 1 - EPS)


def sigmoid(v):
    return 1 / (1 + exp(-v))


def softplus(v):
    return log(1 + exp(v))


def z_norm(beta):
    return (1 - exp(-beta)) / beta


def pdf(z, bit, beta):
    return (exp(beta * (z - 1)) if bit else exp(-beta * z)) / z_norm(beta)


def mix_pdf(q, z, beta):
    return (1 - q) * pdf(z, 0, beta) + q * pdf(z, 1, beta)


def mix_cdf(q, z, beta):
    e = exp(-beta)
    return (1 - q) * (1 - exp(-beta * z)) / (1 - e) + q * (exp(beta * (z - 1)) - e) / (1 - e)


def mix_inv_cdf(q, rho, beta):
    e = exp(-beta)
    b = (rho + e * (q - rho)) / (1 - q) - 1
    c = -(q * e) / (1 - q)
    return -log((-b + sqrt(b * b - 4 * c)) / 2) / beta


def cond_inv_cdf(bit, rho, beta):
    e = exp(-beta)
    if bit == 0:
        return -log(1 - rho * (1 - e)) / beta
    return log(rho * (1 - e) + e) / beta + 1


def soft_decode(qc, L):
    out = []
    for k in range(len(qc) // L):
        copies = qc[k * L:(k + 1) * L]
        p1 = mpf(1)
        p0 = mpf(1)
        for q in copies:
            p1 *= q
            p0 *= 1 - q
        out.append(clamp(p1 / (p1 + p0)))
    return out


def soft_encode(qm, L):
    return [q for q in qm for _ in range(L)]


def xor_prob(a, b):
    return a * (1 - b) + (1 - a) * b


def kl(q, nu=mpf("0.5")):
    return sum(p * log(p / nu) + (1 - p) * log((1 - p) / (1 - nu)) for p in q)


# --- deterministic toy networks (mirrored in tests/test_support.hpp) ---------

def weights(layer, rows, cols):
    return [[mpf("0.5") * sin(mpf("1.3") * o + mpf("0.7") * i + layer + 1) for i in range(cols)] for o in range(rows)]


def biases(layer, rows):
    return [mpf("0.1") * cos(o + layer) for o in range(rows)]


def mlp(sizes, first_layer, x, out_act):
    h = list(x)
    n = len(sizes) - 1
    for l in range(n):
        W = weights(first_layer + l, sizes[l + 1], sizes[l])
        bvec = biases(first_layer + l, sizes[l + 1])
        a = [sum(W[o][i] * h[i] for i in range(len(h))) + bvec[o] for o in range(sizes[l + 1])]
        if l < n - 1:
            h = [v if v > 0 else mpf("0.01") * v for v in a]
        else:
            h = [sigmoid(v) for v in a] if out_act == "logistic" else a
    return h


def toy_x(n):
    return [mpf(k + 1) / (n + 1) for k in range(n)]


def toy_rho(n):
    return [mpf("0.37") + mpf("0.618") * j - int(mpf("0.37") + mpf("0.618") * j) for j in range(n)]


def toy_elbo(kind, M, L, K=8, H=6, beta=15):
    x = toy_x(K)
    if kind == "uncoded":
        D = M
    elif kind == "coded":
        D = M * L
    else:
        D = 2 * M * L
    qu = [clamp(v) for v in mlp([K, H, D], 0, x, "logistic")]
    if kind == "uncoded":
        qm, qs, kls = qu, qu, [kl(qu)]
    elif kind == "coded":
        qm = soft_decode(qu, L)
        qs = soft_encode(qm, L)
        kls = [kl(qm)]
    else:
        q1 = soft_decode(qu[:M * L], L)
        q12 = soft_decode(qu[M * L:], L)
        q2 = [clamp(xor_prob(a, b)) for a, b in zip(q12, q1)]
        q12r = [clamp(xor_prob(a, b)) for a, b in zip(q1, q2)]
        qs = soft_encode(q1, L) + soft_encode(q12r, L)
        kls = [kl(q1), kl(q2)]
    rho = toy_rho(D)
    z = [mix_inv_cdf(q, r, beta) for q, r in zip(qs, rho)]
    Y = mlp([D, H, K], 2, z, "identity")
    recon = sum(xi * yi - softplus(yi) for xi, yi in zip(x, Y))
    logp = sum(log(mix_pdf(mpf("0.5"), zj, beta)) for zj in z)
    logq = sum(log(mix_pdf(q, zj, beta)) for q, zj in zip(qs, z))
    return recon, kls, recon - sum(kls), recon + logp - logq


def main():
    beta = mpf(15)
    rows = []
    rows.append(("soft_decode(0.9,0.8)", soft_decode([mpf("0.9"), mpf("0.8")], 2)[0]))
    rows.append(("soft_decode(0.6,0.6,0.6)", soft_decode([mpf("0.6")] * 3, 3)[0]))
    rows.append(("1/Z at beta=15", 1 / z_norm(beta)))
    rows.append(("inv_cdf bit0 rho=0.5 beta=15", cond_inv_cdf(0, mpf("0.5"), beta)))
    rows.append(("pdf quadrature bit1 beta=15", quad(lambda z: pdf(z, 1, beta), [0, 1])))
    rows.append(("mixture cdf q=0.3 z=0.2 quadrature", quad(lambda z: mix_pdf(mpf("0.3"), z, beta), [0, mpf("0.2")])))
    rows.append(("mixture cdf q=0.3 z=0.2 closed", mix_cdf(mpf("0.3"), mpf("0.2"), beta)))
    rows.append(("mixture inv cdf q=0.3 rho=0.7", mix_inv_cdf(mpf("0.3"), mpf("0.7"), beta)))
    rows.append(("mixture inv cdf q=0.9 rho=0.05 beta=5", mix_inv_cdf(mpf("0.9"), mpf("0.05"), mpf(5))))
    rows.append(("log mixture pdf q=0.5 z=0.5 beta=15", log(mix_pdf(mpf("0.5"), mpf("0.5"), beta))))
    p = mpf("0.2")
    tail = sum(binomial(5, j) * p**j * (1 - p)**(5 - j) for j in range(3, 6))
    rows.append(("binomial tail L=5 p=0.2", tail))
    rows.append(("word error M=4", 1 - (1 - tail)**4))
    rows.append(("KL(1-eps || 0.5)", kl([1 - EPS])))
    rows.append(("entropy q=0.9", -(mpf("0.9") * log(mpf("0.9")) + mpf("0.1") * log(mpf("0.1")))))
    rows.append(("bound at kl=0.5", sqrt(1 - exp(-1))))
    for kind, M, L in (("uncoded", 3, 1), ("coded", 3, 2), ("hier", 2, 2)):
        recon, kls, elbo, logw = toy_elbo(kind, M, L)
        rows.append((f"toy {kind} recon", recon))
        for i, v in enumerate(kls):
            rows.append((f"toy {kind} kl{i + 1}", v))
        rows.append((f"toy {kind} elbo", elbo))
        rows.append((f"toy {kind} log_w", logw))
    for name, value in rows:
        print(f"{name:40s} {mp.nstr(value, 17)}")


if __name__ == "__main__":
    main()
