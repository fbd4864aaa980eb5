# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; signatures mirror ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, fabs

cnp.import_array()


cdef inline void qmul(double* a, double* b, double* out) noexcept nogil:
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


cdef inline void qexp(double* phi, double* out) noexcept nogil:
    cdef double theta = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    cdef double s, n
    if theta < 1e-8:
        out[0] = 1.0 - theta * theta / 8.0
        out[1] = 0.5 * phi[0]
        out[2] = 0.5 * phi[1]
        out[3] = 0.5 * phi[2]
        n = sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2] + out[3] * out[3])
        out[0] /= n
        out[1] /= n
        out[2] /= n
        out[3] /= n
    else:
        s = sin(0.5 * theta) / theta
        out[0] = cos(0.5 * theta)
        out[1] = s * phi[0]
        out[2] = s * phi[1]
        out[3] = s * phi[2]


cdef inline void qrot(double* q, double* R) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    R[0] = 1 - 2 * (y * y + z * z)
    R[1] = 2 * (x * y - w * z)
    R[2] = 2 * (x * z + w * y)
    R[3] = 2 * (x * y + w * z)
    R[4] = 1 - 2 * (x * x + z * z)
    R[5] = 2 * (y * z - w * x)
    R[6] = 2 * (x * z - w * y)
    R[7] = 2 * (y * z + w * x)
    R[8] = 1 - 2 * (x * x + y * y)


def preintegrate(dt, gyro, accel, double gyro_noise, double accel_noise):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dts = np.ascontiguousarray(dt, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g = np.ascontiguousarray(gyro, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(accel, dtype=np.float64)
    cdef Py_ssize_t m = dts.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] P = np.zeros((9, 9))
    cdef double alpha[3]
    cdef double beta[3]
    cdef double q[4]
    cdef double qn[4]
    cdef double dq[4]
    cdef double R[9]
    cdef double Rn[9]
    cdef double wm[3]
    cdef double f0[3]
    cdef double f1[3]
    cdef double fm[3]
    cdef double A[81]
    cdef double Bq[81]
    cdef double T[81]
    cdef double Pn[81]
    cdef double h, nrm, qg, qa, s
    cdef Py_ssize_t n, i, j, k
    for i in range(3):
        alpha[i] = 0.0
        beta[i] = 0.0
    q[0] = 1.0
    q[1] = 0.0
    q[2] = 0.0
    q[3] = 0.0
    qrot(q, R)
    for i in range(81):
        Pn[i] = 0.0
    for n in range(m):
        h = dts[n]
        for i in range(3):
            wm[i] = 0.5 * (g[n, i] + g[n + 1, i]) * h
        qexp(wm, dq)
        qmul(q, dq, qn)
        nrm = sqrt(qn[0] * qn[0] + qn[1] * qn[1] + qn[2] * qn[2] + qn[3] * qn[3])
        for i in range(4):
            qn[i] /= nrm
        qrot(qn, Rn)
        for i in range(3):
            f0[i] = R[3 * i] * a[n, 0] + R[3 * i + 1] * a[n, 1] + R[3 * i + 2] * a[n, 2]
            f1[i] = Rn[3 * i] * a[n + 1, 0] + Rn[3 * i + 1] * a[n + 1, 1] + Rn[3 * i + 2] * a[n + 1, 2]
            fm[i] = 0.5 * (f0[i] + f1[i])

        # A: identity plus the coupling blocks
        for i in range(81):
            A[i] = 0.0
        for i in range(9):
            A[i * 9 + i] = 1.0
        for i in range(3):
            A[i * 9 + 3 + i] = h
        # -[f0]x scaled
        A[0 * 9 + 7] = 0.5 * h * h * f0[2]
        A[0 * 9 + 8] = -0.5 * h * h * f0[1]
        A[1 * 9 + 6] = -0.5 * h * h * f0[2]
        A[1 * 9 + 8] = 0.5 * h * h * f0[0]
        A[2 * 9 + 6] = 0.5 * h * h * f0[1]
        A[2 * 9 + 7] = -0.5 * h * h * f0[0]
        A[3 * 9 + 7] = h * f0[2]
        A[3 * 9 + 8] = -h * f0[1]
        A[4 * 9 + 6] = -h * f0[2]
        A[4 * 9 + 8] = h * f0[0]
        A[5 * 9 + 6] = h * f0[1]
        A[5 * 9 + 7] = -h * f0[0]

        # T = A P
        for i in range(9):
            for j in range(9):
                s = 0.0
                for k in range(9):
                    s += A[i * 9 + k] * Pn[k * 9 + j]
                T[i * 9 + j] = s
        # P = T A^T
        for i in range(9):
            for j in range(9):
                s = 0.0
                for k in range(9):
                    s += T[i * 9 + k] * A[j * 9 + k]
                Pn[i * 9 + j] = s

        # B Q B^T: accel drives (alpha, beta) through R, gyro drives theta through Rn
        qg = gyro_noise * gyro_noise / h
        qa = accel_noise * accel_noise / h
        for i in range(3):
            for j in range(3):
                s = 0.0
                for k in range(3):
                    s += R[3 * i + k] * R[3 * j + k]
                # R R^T block, kept general for numerical symmetry
                Pn[i * 9 + j] += 0.25 * h * h * h * h * qa * s
                Pn[i * 9 + 3 + j] += 0.5 * h * h * h * qa * s
                Pn[(3 + i) * 9 + j] += 0.5 * h * h * h * qa * s
                Pn[(3 + i) * 9 + 3 + j] += h * h * qa * s
                s = 0.0
                for k in range(3):
                    s += Rn[3 * i + k] * Rn[3 * j + k]
                Pn[(6 + i) * 9 + 6 + j] += h * h * qg * s

        for i in range(3):
            alpha[i] += beta[i] * h + 0.5 * fm[i] * h * h
            beta[i] += fm[i] * h
        for i in range(4):
            q[i] = qn[i]
        for i in range(9):
            R[i] = Rn[i]

    for i in range(9):
        for j in range(9):
            P[i, j] = 0.5 * (Pn[i * 9 + j] + Pn[j * 9 + i])
    return (np.array([alpha[0], alpha[1], alpha[2]]),
            np.array([beta[0], beta[1], beta[2]]),
            np.array([q[0], q[1], q[2], q[3]]),
            P)


def sampson_distances(F, x1, x2):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Fm = np.ascontiguousarray(F, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p1 = np.ascontiguousarray(x1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p2 = np.ascontiguousarray(x2, dtype=np.float64)
    cdef Py_ssize_t n = p1.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double a0, a1, a2, b0, b1, num, den
    for i in range(n):
        a0 = Fm[0, 0] * p1[i, 0] + Fm[0, 1] * p1[i, 1] + Fm[0, 2]
        a1 = Fm[1, 0] * p1[i, 0] + Fm[1, 1] * p1[i, 1] + Fm[1, 2]
        a2 = Fm[2, 0] * p1[i, 0] + Fm[2, 1] * p1[i, 1] + Fm[2, 2]
        b0 = Fm[0, 0] * p2[i, 0] + Fm[1, 0] * p2[i, 1] + Fm[2, 0]
        b1 = Fm[0, 1] * p2[i, 0] + Fm[1, 1] * p2[i, 1] + Fm[2, 1]
        num = p2[i, 0] * a0 + p2[i, 1] * a1 + a2
        den = a0 * a0 + a1 * a1 + b0 * b0 + b1 * b1
        if den < 1e-300:
            den = 1e-300
        out[i] = fabs(num) / sqrt(den)
    return out
