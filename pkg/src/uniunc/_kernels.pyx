# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled batched MLP kernels.

Same contract as ``uniunc._kernels_py`` (see its module docstring); the
per-sample loop runs in C with no temporaries, which is what makes dense
Monte Carlo sweeps (thousands of single-vector passes per grid point)
cheap.  All arrays are coerced to C-contiguous float64 on entry.
"""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc

cnp.import_array()

cdef enum:
    MAX_LAYERS = 32


cdef struct LayerMeta:
    const double* w
    Py_ssize_t w_stride       # per-sample stride in doubles, 0 when shared
    const double* b
    Py_ssize_t b_stride
    const double* m
    Py_ssize_t m_stride
    bint has_mask
    bint relu
    Py_ssize_t din
    Py_ssize_t dout


cdef const double* _data(cnp.ndarray a):
    return <const double*> cnp.PyArray_DATA(a)


cdef Py_ssize_t _load_layers(list layers, Py_ssize_t batch, Py_ssize_t d0,
                             LayerMeta* meta, list refs) except -1:
    """Fill ``meta`` from the layer list, returning the output width."""
    cdef Py_ssize_t n_layers = len(layers)
    cdef Py_ssize_t width = d0
    cdef Py_ssize_t idx
    cdef cnp.ndarray w_arr, b_arr, m_arr
    if n_layers > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers supported, got {n_layers}")
    for idx in range(n_layers):
        w, b, m, relu = layers[idx]
        w_arr = np.ascontiguousarray(w, dtype=np.float64)
        if w_arr.ndim == 2:
            meta[idx].w_stride = 0
        elif w_arr.ndim == 3:
            if w_arr.shape[0] != batch:
                raise ValueError(
                    f"layer {idx}: per-sample weights expect batch {batch}, got {w_arr.shape[0]}")
            meta[idx].w_stride = w_arr.shape[1] * w_arr.shape[2]
        else:
            raise ValueError(f"layer {idx}: weight must be 2-D or 3-D, got {w_arr.ndim}-D")
        meta[idx].dout = w_arr.shape[w_arr.ndim - 2]
        meta[idx].din = w_arr.shape[w_arr.ndim - 1]
        if meta[idx].din != width:
            raise ValueError(
                f"layer {idx}: expects {meta[idx].din} inputs, previous width is {width}")

        b_arr = np.ascontiguousarray(b, dtype=np.float64)
        if b_arr.ndim == 1:
            meta[idx].b_stride = 0
        elif b_arr.ndim == 2:
            if b_arr.shape[0] != batch:
                raise ValueError(f"layer {idx}: per-sample bias expects batch {batch}")
            meta[idx].b_stride = b_arr.shape[1]
        else:
            raise ValueError(f"layer {idx}: bias must be 1-D or 2-D")
        if b_arr.shape[b_arr.ndim - 1] != meta[idx].dout:
            raise ValueError(
                f"layer {idx}: bias shape does not match {meta[idx].dout} outputs")

        if m is None:
            meta[idx].has_mask = False
            meta[idx].m = NULL
            meta[idx].m_stride = 0
        else:
            m_arr = np.ascontiguousarray(m, dtype=np.float64)
            if m_arr.ndim == 1:
                meta[idx].m_stride = 0
            elif m_arr.ndim == 2:
                if m_arr.shape[0] != batch:
                    raise ValueError(f"layer {idx}: per-sample mask expects batch {batch}")
                meta[idx].m_stride = m_arr.shape[1]
            else:
                raise ValueError(f"layer {idx}: mask must be 1-D or 2-D")
            if m_arr.shape[m_arr.ndim - 1] != meta[idx].din:
                raise ValueError(f"layer {idx}: mask shape does not match {meta[idx].din} inputs")
            meta[idx].has_mask = True
            meta[idx].m = _data(m_arr)
            refs.append(m_arr)

        meta[idx].w = _data(w_arr)
        meta[idx].b = _data(b_arr)
        meta[idx].relu = bool(relu)
        refs.append(w_arr)
        refs.append(b_arr)
        width = meta[idx].dout
    return width


cdef Py_ssize_t _max_width(LayerMeta* meta, Py_ssize_t n_layers, Py_ssize_t d0):
    cdef Py_ssize_t w = d0
    cdef Py_ssize_t idx
    for idx in range(n_layers):
        if meta[idx].dout > w:
            w = meta[idx].dout
    return w


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) nogil:
    """Dot product with four independent accumulators (fixed summation
    order, lets the compiler vectorize the reduction)."""
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


def forward_batch(list layers, xs):
    """Run the realized layer stack over a batch of inputs."""
    cdef cnp.ndarray xs_arr = np.ascontiguousarray(xs, dtype=np.float64)
    if xs_arr.ndim != 2:
        raise ValueError(f"xs must be (batch, features), got {xs_arr.ndim}-D")
    cdef Py_ssize_t batch = xs_arr.shape[0]
    cdef Py_ssize_t d0 = xs_arr.shape[1]
    cdef Py_ssize_t n_layers = len(layers)
    cdef LayerMeta meta[MAX_LAYERS]
    cdef list refs = []
    cdef Py_ssize_t d_out = _load_layers(layers, batch, d0, meta, refs)
    cdef cnp.ndarray out = np.empty((batch, d_out), dtype=np.float64)

    cdef const double* xp = _data(xs_arr)
    cdef double* op = <double*> cnp.PyArray_DATA(out)
    cdef Py_ssize_t maxw = _max_width(meta, n_layers, d0)
    cdef double* buf0 = <double*> malloc(2 * maxw * sizeof(double))
    if buf0 == NULL:
        raise MemoryError()
    cdef double* buf1 = buf0 + maxw
    cdef double* tmp
    cdef const double* wrow
    cdef const double* bs
    cdef const double* ms
    cdef double acc
    cdef Py_ssize_t s, l, i, o, din

    with nogil:
        for s in range(batch):
            for i in range(d0):
                buf0[i] = xp[s * d0 + i]
            for l in range(n_layers):
                din = meta[l].din
                if meta[l].has_mask:
                    ms = meta[l].m + meta[l].m_stride * s
                    for i in range(din):
                        buf0[i] *= ms[i]
                bs = meta[l].b + meta[l].b_stride * s
                for o in range(meta[l].dout):
                    wrow = meta[l].w + meta[l].w_stride * s + o * din
                    acc = bs[o] + _dot(wrow, buf0, din)
                    if meta[l].relu and acc <= 0.0:
                        acc = 0.0
                    buf1[o] = acc
                tmp = buf0
                buf0 = buf1
                buf1 = tmp
            for o in range(d_out):
                op[s * d_out + o] = buf0[o]
    # buffers were swapped in pairs; free the block start
    free(buf0 if buf0 < buf1 else buf1)
    return out


def jacobian_batch(list layers, xs):
    """Outputs and exact input Jacobians for a batch of inputs."""
    cdef cnp.ndarray xs_arr = np.ascontiguousarray(xs, dtype=np.float64)
    if xs_arr.ndim != 2:
        raise ValueError(f"xs must be (batch, features), got {xs_arr.ndim}-D")
    cdef Py_ssize_t batch = xs_arr.shape[0]
    cdef Py_ssize_t d0 = xs_arr.shape[1]
    cdef Py_ssize_t n_layers = len(layers)
    cdef LayerMeta meta[MAX_LAYERS]
    cdef list refs = []
    cdef Py_ssize_t d_out = _load_layers(layers, batch, d0, meta, refs)
    cdef cnp.ndarray out = np.empty((batch, d_out), dtype=np.float64)
    cdef cnp.ndarray jac = np.empty((batch, d_out, d0), dtype=np.float64)

    cdef const double* xp = _data(xs_arr)
    cdef double* op = <double*> cnp.PyArray_DATA(out)
    cdef double* jp = <double*> cnp.PyArray_DATA(jac)
    cdef Py_ssize_t maxw = _max_width(meta, n_layers, d0)
    cdef double* hbuf = <double*> malloc((2 * maxw * (1 + d0) + d0) * sizeof(double))
    if hbuf == NULL:
        raise MemoryError()
    cdef double* h0 = hbuf
    cdef double* h1 = hbuf + maxw
    cdef double* j0 = hbuf + 2 * maxw
    cdef double* j1 = j0 + maxw * d0
    cdef double* jrow = j1 + maxw * d0  # per-output Jacobian accumulator
    cdef double* tmp
    cdef const double* wrow
    cdef const double* bs
    cdef const double* ms
    cdef double acc, wv, ja, jb
    cdef Py_ssize_t s, l, i, o, d, din

    with nogil:
        for s in range(batch):
            for i in range(d0):
                h0[i] = xp[s * d0 + i]
                for d in range(d0):
                    j0[i * d0 + d] = 1.0 if i == d else 0.0
            for l in range(n_layers):
                din = meta[l].din
                if meta[l].has_mask:
                    ms = meta[l].m + meta[l].m_stride * s
                    for i in range(din):
                        h0[i] *= ms[i]
                        for d in range(d0):
                            j0[i * d0 + d] *= ms[i]
                bs = meta[l].b + meta[l].b_stride * s
                for o in range(meta[l].dout):
                    wrow = meta[l].w + meta[l].w_stride * s + o * din
                    # same summation order as forward_batch, so the output
                    # field is bit-identical to a plain forward pass
                    acc = bs[o] + _dot(wrow, h0, din)
                    if meta[l].relu and acc <= 0.0:
                        h1[o] = 0.0
                        for d in range(d0):
                            j1[o * d0 + d] = 0.0
                        continue
                    h1[o] = acc
                    # Jacobian row sweep; dedicated accumulator chains for
                    # the 1-D and 2-D input cases keep it register-only
                    if d0 == 1:
                        ja = 0.0
                        for i in range(din):
                            ja += wrow[i] * j0[i]
                        j1[o] = ja
                    elif d0 == 2:
                        ja = 0.0
                        jb = 0.0
                        for i in range(din):
                            wv = wrow[i]
                            ja += wv * j0[2 * i]
                            jb += wv * j0[2 * i + 1]
                        j1[2 * o] = ja
                        j1[2 * o + 1] = jb
                    else:
                        for d in range(d0):
                            jrow[d] = 0.0
                        for i in range(din):
                            wv = wrow[i]
                            for d in range(d0):
                                jrow[d] += wv * j0[i * d0 + d]
                        for d in range(d0):
                            j1[o * d0 + d] = jrow[d]
                tmp = h0
                h0 = h1
                h1 = tmp
                tmp = j0
                j0 = j1
                j1 = tmp
            for o in range(d_out):
                op[s * d_out + o] = h0[o]
                for d in range(d0):
                    jp[(s * d_out + o) * d0 + d] = j0[o * d0 + d]
    free(hbuf)
    return out, jac
