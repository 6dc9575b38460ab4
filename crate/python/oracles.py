"""Reference values frozen into the Rust tests, computed by adaptive quadrature.

Run: python3 python/oracles.py
"""
import mpmath as mp

mp.mp.dps = 30


def step(t):
    return mp.e ** (-1 / t) if t > 0 else mp.mpf(0)


def chi(x):
    if x <= 1:
        return mp.mpf(1)
    if x >= 2:
        return mp.mpf(0)
    p, q = step(2 - x), step(x - 1)
    return p / (p + q)


def psi0(t):
    return t * t / (1 + t * t) ** 2


def quad(f, a, b, brk=()):
    pts = [a] + [x for x in brk if a < x < b] + [b]
    return mp.quad(f, pts)


def radiation(b):
    b0 = 1 / mp.sqrt(b)
    bq, b3 = b0 / 4, 3 * b0
    cq = lambda t: chi(t / bq)
    brk = (1, bq, 2 * bq, b3, 6 * b0)
    c1 = quad(lambda t: t**3 / (1 + t * t) ** 2 * cq(t), 0, 2 * bq, (1, bq))

    def j1(r):
        return quad(lambda t: t * psi0(t) * cq(t), 0, min(r, 2 * bq), (1, bq))

    def j1_tail(r):
        return j1(mp.inf) - j1(r)

    def p(r):
        if r <= bq:
            return mp.mpf(0)
        return quad(lambda t: (1 - cq(t)) * psi0(t) / t, bq, r, (2 * bq,))

    def p_tail(r):
        # int_r^inf (1 - chi) psi0/t, with int_r^inf psi0/t = 1/(2(1+r^2))
        full = 1 / (2 * (1 + r * r))
        if r >= 2 * bq:
            return full
        head = quad(lambda t: cq(t) * psi0(t) / t, r, 2 * bq, (bq,))
        return full - head

    def shape(r):
        c3 = chi(r / b3)
        r2 = r * r
        return 4 * ((1 - c3) * j1_tail(r) - c3 * j1(r) + r2 * ((1 - c3) * p_tail(r) - c3 * p(r)) - r2 / (2 * (1 + r2)))

    mp.mp.dps = 20
    c2 = quad(lambda t: shape(t) * t / (1 + t * t) ** 2, 0, mp.inf, brk)
    mp.mp.dps = 30
    return c1, c2, 1 / (c1 - c2)


def m1(r):
    """Level-one partial mass from the variation of constants formula, source r^2 Q + 2 Q log(1+r^2)."""
    q = lambda t: 8 / (1 + t * t) ** 2
    f = lambda t: t * t * q(t) + 2 * q(t) * mp.log(1 + t * t)
    k1 = lambda t: (t**4 + 4 * t * t * mp.log(t) - 1) / t
    psi1 = (r**4 + 4 * r * r * mp.log(r) - 1) / (1 + r * r) ** 2
    a = quad(lambda t: k1(t) * f(t), 0, r, (1,))
    b = quad(lambda t: t * f(t), 0, r, (1,))
    return -a * psi0(r) / 2 + b * psi1 / 2


def main():
    for r in [10, 100, 1000]:
        v = m1(mp.mpf(r))
        print(f"m1({r}) = {mp.nstr(v, 15)}  m1 - 4 log r = {mp.nstr(v - 4 * mp.log(r), 15)}  n1 = {mp.nstr(v - 2 * mp.log(1 + r * r), 15)}", flush=True)
    print("log moment of Q:", quad(lambda t: 8 / (1 + t * t) ** 2 * mp.log(t) * t, 0, mp.inf, (1,)), flush=True)
    print("int log(1+u)/(1+u)^2:", quad(lambda u: mp.log(1 + u) / (1 + u) ** 2, 0, mp.inf))
    for b in ["1e-4", "1e-6", "1e-8"]:
        c1, c2, cb = radiation(mp.mpf(b))
        print(f"b={b} c1={mp.nstr(c1, 15)} c2={mp.nstr(c2, 15)} c_b={mp.nstr(cb, 15)} ratio={mp.nstr(cb * abs(mp.log(mp.mpf(b))) / 2, 12)}", flush=True)


if __name__ == "__main__":
    main()
