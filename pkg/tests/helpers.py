import numpy as np
from hypothesis import strategies as st


def random_spd(rng, d=2, cond=50.0, scale=1.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = scale * np.exp(rng.uniform(0.0, np.log(cond), d))
    return (q * eig) @ q.T


@st.composite
def spd_matrices(draw, d=2, max_log_eig=4.0):
    """SPD matrices from a random rotation and bounded log-eigenvalues."""
    seed = draw(st.integers(0, 2**32 - 1))
    logs = draw(
        st.lists(st.floats(-max_log_eig, max_log_eig), min_size=d, max_size=d)
    )
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    return (q * np.exp(logs)) @ q.T
