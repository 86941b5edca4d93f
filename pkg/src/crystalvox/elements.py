"""Periodic-table lookups for Z in [1, 118]."""

from .errors import UnknownElementError

SYMBOLS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)

_Z_BY_SYMBOL = {s: i + 1 for i, s in enumerate(SYMBOLS)}

MAX_Z = len(SYMBOLS)


def atomic_number(symbol: str) -> int:
    """Resolve an element symbol (case-normalized) to its atomic number.

    Raises UnknownElementError for anything not in the periodic table.
    """
    s = symbol.strip()
    s = s[:1].upper() + s[1:].lower()
    z = _Z_BY_SYMBOL.get(s)
    if z is None:
        raise UnknownElementError(f"unknown element symbol: {symbol!r}")
    return z


def symbol_for(z: int) -> str:
    if not 1 <= z <= MAX_Z:
        raise UnknownElementError(f"atomic number out of range: {z}")
    return SYMBOLS[z - 1]
