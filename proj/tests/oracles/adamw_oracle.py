"""Scalar AdamW recursion with decoupled weight decay, written out longhand.

Prints the parameter trajectory that test_train.cpp freezes.
"""
import math

LR, B1, B2, EPS = 1e-2, 0.9, 0.98, 1e-8
GRADS = [0.3, -0.1, 0.2, 0.05, -0.4]


def run(p, wd):
    m = v = 0.0
    out = []
    for t, g in enumerate(GRADS, start=1):
        m = B1 * m + (1 - B1) * g
        v = B2 * v + (1 - B2) * g * g
        mhat = m / (1 - B1 ** t)
        vhat = v / (1 - B2 ** t)
        p = p * (1 - LR * wd)
        p = p - LR * mhat / (math.sqrt(vhat) + EPS)
        out.append(p)
    return out


for wd in (0.01, 0.0):
    print(f"wd={wd}:", ", ".join(repr(x) for x in run(0.5, wd)))
