# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled navigation kernels; same scheme and signatures as ``_nav_py``."""

from libc.math cimport sin, sqrt

NAME = "cython"

cdef double SMALL_ANGLE = 1e-7


cdef inline void skew3(const double* v, double* M) noexcept nogil:
    M[0] = 0.0;   M[1] = -v[2]; M[2] = v[1]
    M[3] = v[2];  M[4] = 0.0;   M[5] = -v[0]
    M[6] = -v[1]; M[7] = v[0];  M[8] = 0.0


cdef inline void mul3(const double* A, const double* B, double* out) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = (A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j]
                              + A[3 * i + 2] * B[6 + j])


cdef inline void mulT3(const double* A, const double* B, double* out) noexcept nogil:
    # out = A^T B
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = A[i] * B[j] + A[3 + i] * B[3 + j] + A[6 + i] * B[6 + j]


cdef inline void matvec3(const double* A, const double* x, double* out) noexcept nogil:
    cdef int i
    for i in range(3):
        out[i] = A[3 * i] * x[0] + A[3 * i + 1] * x[1] + A[3 * i + 2] * x[2]


cdef inline void exp3(const double* w, double s, double* R) noexcept nogil:
    # R = Exp(s * w)
    cdef double phi[3]
    cdef double K[9]
    cdef double K2[9]
    cdef double theta, a, b
    cdef int i
    for i in range(3):
        phi[i] = s * w[i]
    theta = sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    skew3(phi, K)
    mul3(K, K, K2)
    if theta < SMALL_ANGLE:
        a = 1.0
        b = 0.5
    else:
        a = sin(theta) / theta
        b = 2.0 * sin(0.5 * theta) * sin(0.5 * theta) / (theta * theta)
    for i in range(9):
        R[i] = a * K[i] + b * K2[i]
    R[0] += 1.0
    R[4] += 1.0
    R[8] += 1.0


cdef inline void jr3(const double* w, double s, double* J) noexcept nogil:
    # right Jacobian of SO(3) at s * w
    cdef double phi[3]
    cdef double K[9]
    cdef double K2[9]
    cdef double theta2, theta, a, b
    cdef int i
    for i in range(3):
        phi[i] = s * w[i]
    theta2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    skew3(phi, K)
    mul3(K, K, K2)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        a = 0.5
        b = 1.0 / 6.0
    else:
        theta = sqrt(theta2)
        a = 2.0 * sin(0.5 * theta) * sin(0.5 * theta) / theta2
        b = (theta - sin(theta)) / (theta2 * theta)
    for i in range(9):
        J[i] = -a * K[i] + b * K2[i]
    J[0] += 1.0
    J[4] += 1.0
    J[8] += 1.0


cdef inline void orthonormalize3(double* C) noexcept nogil:
    # C <- 1/2 C (3 I - C^T C)
    cdef double CtC[9]
    cdef double out[9]
    cdef int i
    mulT3(C, C, CtC)
    for i in range(9):
        CtC[i] = -CtC[i]
    CtC[0] += 3.0
    CtC[4] += 3.0
    CtC[8] += 3.0
    mul3(C, CtC, out)
    for i in range(9):
        C[i] = 0.5 * out[i]


cdef inline void nav_step(double* C, double* v, double* p, const double* w,
                          const double* a, double dt, const double* g) noexcept nogil:
    cdef double Gam[9]
    cdef double Gh[9]
    cdef double Cmid[9]
    cdef double Cnew[9]
    cdef double f[3]
    cdef int i
    exp3(w, 0.5 * dt, Gh)
    exp3(w, dt, Gam)
    mul3(C, Gh, Cmid)
    mul3(C, Gam, Cnew)
    orthonormalize3(Cnew)
    matvec3(Cmid, a, f)
    for i in range(3):
        f[i] = f[i] - g[i]
        p[i] = p[i] + v[i] * dt + (0.5 * dt * dt) * f[i]
        v[i] = v[i] + f[i] * dt
    for i in range(9):
        C[i] = Cnew[i]


cdef inline void put_block(double* M, int r0, int c0, const double* B, double s) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            M[15 * (r0 + i) + c0 + j] = s * B[3 * i + j]


cdef void build_transition(const double* w, const double* a, double dt, double* Phi) noexcept nogil:
    cdef double Gam[9]
    cdef double Gh[9]
    cdef double G[9]
    cdef double H[9]
    cdef double J[9]
    cdef double Jh[9]
    cdef double A[9]
    cdef double HA[9]
    cdef double HAH[9]
    cdef double HAJ[9]
    cdef int i, j
    exp3(w, dt, Gam)
    exp3(w, 0.5 * dt, Gh)
    for i in range(3):
        for j in range(3):
            G[3 * i + j] = Gam[3 * j + i]
            H[3 * i + j] = Gh[3 * j + i]
    jr3(w, dt, J)
    jr3(w, 0.5 * dt, Jh)
    skew3(a, A)
    mul3(H, A, HA)
    mul3(HA, H, HAH)
    mul3(HA, Jh, HAJ)

    for i in range(225):
        Phi[i] = 0.0
    for i in range(15):
        Phi[16 * i] = 1.0
    put_block(Phi, 0, 0, G, 1.0)
    put_block(Phi, 0, 9, J, -dt)
    put_block(Phi, 3, 0, HAH, -dt)
    put_block(Phi, 3, 3, G, 1.0)
    put_block(Phi, 3, 9, HAJ, 0.5 * dt * dt)
    put_block(Phi, 3, 12, H, -dt)
    put_block(Phi, 6, 0, HAH, -0.5 * dt * dt)
    put_block(Phi, 6, 3, G, dt)
    put_block(Phi, 6, 6, G, 1.0)
    put_block(Phi, 6, 9, HAJ, 0.25 * dt * dt * dt)
    put_block(Phi, 6, 12, H, -0.5 * dt * dt)


cdef void cov_step(double* P, const double* Phi, const double* noise, double dt) noexcept nogil:
    cdef double T[225]
    cdef double Pn[225]
    cdef double white = 1.0 / (noise[4] * dt)
    cdef double walk = noise[4] * dt
    cdef double qg = noise[0] * white
    cdef double qa = noise[1] * white
    cdef double acc
    cdef int i, j, k

    # T = Phi P
    for i in range(15):
        for j in range(15):
            acc = 0.0
            for k in range(15):
                acc += Phi[15 * i + k] * P[15 * k + j]
            T[15 * i + j] = acc
    # Pn = T Phi^T + Q
    for i in range(15):
        for j in range(15):
            acc = 0.0
            for k in range(15):
                acc += T[15 * i + k] * Phi[15 * j + k]
            Pn[15 * i + j] = acc
    for i in range(9):
        for j in range(9):
            acc = 0.0
            for k in range(3):
                acc += qg * Phi[15 * i + 9 + k] * Phi[15 * j + 9 + k]
                acc += qa * Phi[15 * i + 12 + k] * Phi[15 * j + 12 + k]
            Pn[15 * i + j] += acc
    for i in range(3):
        Pn[15 * (9 + i) + 9 + i] += noise[2] * walk
        Pn[15 * (12 + i) + 12 + i] += noise[3] * walk
    for i in range(15):
        for j in range(15):
            P[15 * i + j] = 0.5 * (Pn[15 * i + j] + Pn[15 * j + i])


def transition(double[::1] w, double[::1] a, double dt):
    """Error-state transition matrix of one step (15 x 15)."""
    import numpy as np
    out = np.empty((15, 15))
    cdef double[:, ::1] Phi = out
    build_transition(&w[0], &a[0], dt, &Phi[0, 0])
    return out


def integrate(C0, v0, p0, double[:, ::1] gyro, double[:, ::1] accel, double[::1] dt,
              double[::1] gravity, double[:, :, ::1] C_out, double[:, ::1] v_out,
              double[:, ::1] p_out):
    """Dead-reckon ``len(dt)`` steps; writes ``len(dt) + 1`` states including
    the initial one."""
    cdef double C[9]
    cdef double v[3]
    cdef double p[3]
    cdef Py_ssize_t n = dt.shape[0]
    cdef Py_ssize_t k
    cdef int i, j
    for i in range(3):
        v[i] = v0[i]
        p[i] = p0[i]
        for j in range(3):
            C[3 * i + j] = C0[i][j]
    with nogil:
        for k in range(n + 1):
            if k > 0:
                nav_step(C, v, p, &gyro[k - 1, 0], &accel[k - 1, 0], dt[k - 1], &gravity[0])
            for i in range(3):
                v_out[k, i] = v[i]
                p_out[k, i] = p[i]
                for j in range(3):
                    C_out[k, i, j] = C[3 * i + j]


def propagate(double[:, ::1] C, double[::1] v, double[::1] p, double[::1] bg,
              double[::1] ba, double[:, ::1] P, double[:, ::1] gyro,
              double[:, ::1] accel, double[::1] dt, double[::1] gravity,
              double[::1] noise, C_out=None, v_out=None, p_out=None):
    """Propagate mean and covariance through ``len(dt)`` steps in place."""
    cdef double Cc[9]
    cdef double Phi[225]
    cdef double w[3]
    cdef double a[3]
    cdef Py_ssize_t n = dt.shape[0]
    cdef Py_ssize_t k
    cdef int i, j
    cdef bint record = C_out is not None
    cdef double[:, :, ::1] Co
    cdef double[:, ::1] vo
    cdef double[:, ::1] po
    if record:
        Co = C_out
        vo = v_out
        po = p_out
    for i in range(3):
        for j in range(3):
            Cc[3 * i + j] = C[i, j]
    with nogil:
        for k in range(n):
            for i in range(3):
                w[i] = gyro[k, i] - bg[i]
                a[i] = accel[k, i] - ba[i]
            build_transition(w, a, dt[k], Phi)
            nav_step(Cc, &v[0], &p[0], w, a, dt[k], &gravity[0])
            cov_step(&P[0, 0], Phi, &noise[0], dt[k])
            if record:
                for i in range(3):
                    vo[k, i] = v[i]
                    po[k, i] = p[i]
                    for j in range(3):
                        Co[k, i, j] = Cc[3 * i + j]
    for i in range(3):
        for j in range(3):
            C[i, j] = Cc[3 * i + j]
