"""Anatomical label codes and node vocabulary for the Circle of Willis.

The 13 artery segments carry fixed integer codes in the multiclass masks.
Segment adjacency and the per-segment node vocabulary drive label transfer,
cross-segment reconnection, node naming, and edge validity rules.
"""

from __future__ import annotations

BACKGROUND = 0

SEGMENT_NAMES: dict[int, str] = {
    1: "BA",
    2: "R-PCA",
    3: "L-PCA",
    4: "R-ICA",
    5: "R-MCA",
    6: "L-ICA",
    7: "L-MCA",
    8: "R-Pcom",
    9: "L-Pcom",
    10: "Acom",
    11: "R-ACA",
    12: "L-ACA",
    15: "3rd-A2",
}

SEGMENT_CODES: dict[str, int] = {v: k for k, v in SEGMENT_NAMES.items()}

PERMITTED_CODES = frozenset({BACKGROUND} | set(SEGMENT_NAMES))

BA = 1
R_PCA, L_PCA = 2, 3
R_ICA, L_ICA = 4, 6
R_MCA, L_MCA = 5, 7
R_PCOM, L_PCOM = 8, 9
ACOM = 10
R_ACA, L_ACA = 11, 12
THIRD_A2 = 15

# Segment pairs that share an anatomical junction.  Cross-segment skeleton
# bridges and cross-segment graph edges are only valid along these pairs.
ADJACENT_SEGMENTS: frozenset[frozenset[int]] = frozenset(
    frozenset(pair)
    for pair in [
        (BA, R_PCA),
        (BA, L_PCA),
        (R_ICA, R_MCA),
        (R_ICA, R_ACA),
        (R_ICA, R_PCOM),
        (L_ICA, L_MCA),
        (L_ICA, L_ACA),
        (L_ICA, L_PCOM),
        (R_PCA, R_PCOM),
        (L_PCA, L_PCOM),
        (ACOM, R_ACA),
        (ACOM, L_ACA),
        (ACOM, THIRD_A2),
    ]
)

# Closed vocabulary of anatomical node names per segment.
NODES_PER_SEGMENT: dict[int, tuple[str, ...]] = {
    BA: ("BA start", "BA bifurcation", "R-PCA boundary", "L-PCA boundary"),
    R_PCA: ("BA boundary", "Pcom bifurcation", "Pcom boundary", "PCA end"),
    L_PCA: ("BA boundary", "Pcom bifurcation", "Pcom boundary", "PCA end"),
    R_ICA: (
        "ICA start",
        "Pcom bifurcation",
        "Pcom boundary",
        "ICA bifurcation",
        "ACA boundary",
        "MCA boundary",
    ),
    L_ICA: (
        "ICA start",
        "Pcom bifurcation",
        "Pcom boundary",
        "ICA bifurcation",
        "ACA boundary",
        "MCA boundary",
    ),
    R_MCA: ("ICA boundary", "MCA end"),
    L_MCA: ("ICA boundary", "MCA end"),
    R_PCOM: ("ICA boundary", "PCA boundary"),
    L_PCOM: ("ICA boundary", "PCA boundary"),
    ACOM: ("R-ACA boundary", "L-ACA boundary", "3rd-A2 bifurcation", "3rd-A2 boundary"),
    R_ACA: ("ICA boundary", "Acom bifurcation", "Acom boundary", "ACA end"),
    L_ACA: ("ICA boundary", "Acom bifurcation", "Acom boundary", "ACA end"),
    THIRD_A2: ("Acom boundary", "3rd-A2 end"),
}


def base_name(code: int) -> str:
    """Segment name with the R-/L- side prefix stripped ('R-PCA' -> 'PCA')."""
    name = SEGMENT_NAMES[code]
    if name.startswith(("R-", "L-")):
        return name[2:]
    return name


def boundary_node_name(segment: int, other: int) -> str | None:
    """Name of the boundary node toward ``other`` within ``segment``'s vocabulary.

    Side prefixes are dropped unless the vocabulary demands them (the BA keeps
    R-PCA/L-PCA apart, the Acom keeps R-ACA/L-ACA apart).  Returns None when
    the pairing is not part of the vocabulary.
    """
    vocab = NODES_PER_SEGMENT.get(segment, ())
    qualified = f"{SEGMENT_NAMES[other]} boundary"
    if qualified in vocab:
        return qualified
    sideless = f"{base_name(other)} boundary"
    if sideless in vocab:
        return sideless
    return None


def are_adjacent(a: int, b: int) -> bool:
    return frozenset((a, b)) in ADJACENT_SEGMENTS
