import numpy as np
import pandas as pd

from firmcomplexity.ingest import make_hs_map
from firmcomplexity.matrix import ExportMatrix
import scipy.sparse as sp


def labeled(E, rows=None, cols=None, meta=None):
    E = sp.csr_matrix(np.asarray(E, dtype=float))
    E.eliminate_zeros()
    n, p = E.shape
    rows = np.array(rows if rows is not None else [f"f{i}" for i in range(n)], dtype=object)
    cols = np.array(cols if cols is not None else [f"{j:06d}" for j in range(p)], dtype=object)
    return ExportMatrix(values=E, rows=rows, cols=cols, meta=dict(meta or {}))


def full_hs_map(extra=()):
    """One heading per section (sections 1..21) plus optional extra HS6 codes."""
    rows = []
    for s in range(1, 22):
        hs4 = f"{s:02d}01"
        rows.append((f"{hs4}01", hs4, s, f"S{s}"))
        rows.append((f"{hs4}02", hs4, s, f"S{s}"))
    for code, section in extra:
        rows.append((code, code[:4], section, f"S{section}"))
    return make_hs_map(pd.DataFrame(rows, columns=["hs6", "hs4", "section_index",
                                                   "section_label"]))
