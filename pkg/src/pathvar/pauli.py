"""Pauli words in symplectic form and their conjugation rules.

A Pauli word on ``n`` qubits is stored as a pair of bit masks ``(x, z)``
packed into Python integers (bit ``q`` of ``x`` set means an X component on
qubit ``q``, bit ``q`` of ``z`` a Z component; both set means Y), plus a
global phase exponent ``phase_pow`` so that the operator is
``i**phase_pow * (tensor product of letters)``.

Two text forms are accepted: a sparse form like ``"X0 Z3 Y7"`` (letter
followed by qubit index, whitespace separated) and a dense form like
``"XIZY"`` (one letter per qubit, qubit 0 first). Serialization always
emits the sparse form, with the identity written as ``"I"``.

Conjugation by the named Clifford gates {H, S, SDG, X, Y, Z, CNOT, CZ,
SWAP} is table driven, and conjugation through a Pauli rotation at a
quarter-turn angle is deterministic: for ``R = exp(-i*theta*P/2)`` and a
word ``s`` anticommuting with ``P``,

    R(theta)^dag s R(theta) = cos(theta) * s - i * sin(theta) * s @ P,

so at ``theta = k*pi/2`` the image is a single signed Pauli word.
"""

from __future__ import annotations

from dataclasses import dataclass

_LETTERS = "IXYZ"

# letter -> (x bit, z bit)
_LETTER_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_LETTER = {v: k for k, v in _LETTER_BITS.items()}

# Single-qubit conjugation tables: gate name -> {letter: (letter, sign)}.
# Entry (m, s) means  U^dag L U = s * m  (the backward-propagation
# direction: pushing an observable from the output toward the input).
# Every supported gate except S/SDG is self-inverse, so only those two
# care about the direction; S^dag X S = -Y while S X S^dag = +Y.
_TABLEAU_1Q = {
    "H": {"I": ("I", 1), "X": ("Z", 1), "Y": ("Y", -1), "Z": ("X", 1)},
    "S": {"I": ("I", 1), "X": ("Y", -1), "Y": ("X", 1), "Z": ("Z", 1)},
    "SDG": {"I": ("I", 1), "X": ("Y", 1), "Y": ("X", -1), "Z": ("Z", 1)},
    "X": {"I": ("I", 1), "X": ("X", 1), "Y": ("Y", -1), "Z": ("Z", -1)},
    "Y": {"I": ("I", 1), "X": ("X", -1), "Y": ("Y", 1), "Z": ("Z", -1)},
    "Z": {"I": ("I", 1), "X": ("X", -1), "Y": ("Y", -1), "Z": ("Z", 1)},
}


def _build_cnot_tableau():
    # CNOT (control, target): X_c -> X_c X_t, Z_t -> Z_c Z_t, X_t and Z_c
    # unchanged. Letter-frame sign flips exactly for inputs XZ and YY,
    # captured by the parity rule x_c & z_t & (x_t ^ z_c ^ 1).
    table = {}
    for lc in _LETTERS:
        for lt in _LETTERS:
            xc, zc = _LETTER_BITS[lc]
            xt, zt = _LETTER_BITS[lt]
            nxc, nzc = xc, zc ^ zt
            nxt, nzt = xt ^ xc, zt
            sign = -1 if xc & zt & (xt ^ zc ^ 1) else 1
            table[(lc, lt)] = (_BITS_LETTER[(nxc, nzc)], _BITS_LETTER[(nxt, nzt)], sign)
    return table


def _build_cz_tableau():
    # CZ (a, b): X_a -> X_a Z_b, X_b -> Z_a X_b, Z unchanged. Letter-frame
    # sign flips exactly for inputs XY and YX: x_a & x_b & (z_a ^ z_b).
    table = {}
    for la in _LETTERS:
        for lb in _LETTERS:
            xa, za = _LETTER_BITS[la]
            xb, zb = _LETTER_BITS[lb]
            nxa, nza = xa, za ^ xb
            nxb, nzb = xb, zb ^ xa
            sign = -1 if xa & xb & (za ^ zb) else 1
            table[(la, lb)] = (_BITS_LETTER[(nxa, nza)], _BITS_LETTER[(nxb, nzb)], sign)
    return table


_CNOT_TABLEAU = _build_cnot_tableau()
_CZ_TABLEAU = _build_cz_tableau()

CLIFFORD_NAMES = frozenset(["H", "S", "SDG", "X", "Y", "Z", "CNOT", "CZ", "SWAP"])
CLIFFORD_ARITY = {
    "H": 1, "S": 1, "SDG": 1, "X": 1, "Y": 1, "Z": 1,
    "CNOT": 2, "CZ": 2, "SWAP": 2,
}

_INVERSE_NAME = {"S": "SDG", "SDG": "S"}


def inverse_gate_name(name: str) -> str:
    """Name of the inverse gate (identity for the self-inverse majority)."""
    return _INVERSE_NAME.get(name, name)


class PauliError(ValueError):
    """Raised on malformed Pauli text or incompatible operands."""


@dataclass(frozen=True)
class PauliWord:
    """An n-qubit Pauli word ``i**phase_pow * P_0 (x) P_1 (x) ...``."""

    n: int
    x: int = 0
    z: int = 0
    phase_pow: int = 0

    # -- constructors ------------------------------------------------------

    @staticmethod
    def identity(n: int) -> "PauliWord":
        return PauliWord(n)

    @staticmethod
    def from_text(text: str, n: int | None = None) -> "PauliWord":
        """Parse sparse (``"X0 Z3"``) or dense (``"XIZ"``) Pauli text.

        The sparse form is detected by the presence of digits. ``n`` is
        inferred when omitted (dense: the string length; sparse: the
        largest index plus one) and validated otherwise.
        """
        s = text.strip().upper()
        if not s:
            raise PauliError("empty Pauli text")
        if any(ch.isdigit() for ch in s):
            x = z = 0
            top = -1
            for token in s.split():
                letter, idx_text = token[0], token[1:]
                if letter not in _LETTER_BITS or not idx_text.isdigit():
                    raise PauliError(f"bad Pauli token {token!r}")
                q = int(idx_text)
                if (x >> q) & 1 or (z >> q) & 1:
                    raise PauliError(f"qubit {q} assigned twice in {text!r}")
                bx, bz = _LETTER_BITS[letter]
                x |= bx << q
                z |= bz << q
                top = max(top, q)
            size = top + 1 if n is None else n
        else:
            if s == "I" and n is not None:
                return PauliWord(n)
            x = z = 0
            for q, letter in enumerate(s):
                if letter not in _LETTER_BITS:
                    raise PauliError(f"bad Pauli letter {letter!r} in {text!r}")
                bx, bz = _LETTER_BITS[letter]
                x |= bx << q
                z |= bz << q
            size = len(s) if n is None else n
        if size < 1:
            raise PauliError("Pauli word needs at least one qubit")
        if n is not None and (x | z) >> n:
            raise PauliError(f"Pauli {text!r} exceeds {n} qubits")
        return PauliWord(size, x, z)

    # -- text --------------------------------------------------------------

    def to_text(self) -> str:
        """Sparse text form, ``"I"`` for the identity."""
        parts = [
            f"{self.letter(q)}{q}" for q in range(self.n) if self.letter(q) != "I"
        ]
        return " ".join(parts) if parts else "I"

    def to_dense_text(self) -> str:
        return "".join(self.letter(q) for q in range(self.n))

    def letter(self, q: int) -> str:
        return _BITS_LETTER[((self.x >> q) & 1, (self.z >> q) & 1)]

    # -- structure ---------------------------------------------------------

    @property
    def weight(self) -> int:
        return (self.x | self.z).bit_count()

    @property
    def support(self) -> tuple[int, ...]:
        m = self.x | self.z
        return tuple(q for q in range(self.n) if (m >> q) & 1)

    @property
    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    @property
    def phase(self) -> complex:
        return (1, 1j, -1, -1j)[self.phase_pow % 4]

    def commutes(self, other: "PauliWord") -> bool:
        acc = (self.x & other.z).bit_count() + (self.z & other.x).bit_count()
        return acc % 2 == 0

    # -- algebra -----------------------------------------------------------

    def multiply(self, other: "PauliWord") -> "PauliWord":
        """Operator product ``self @ other`` with exact phase tracking."""
        if self.n != other.n:
            raise PauliError("size mismatch in Pauli product")
        x3 = self.x ^ other.x
        z3 = self.z ^ other.z
        # letters = i^{#Y} X^x Z^z; X^x1 Z^z1 X^x2 Z^z2 picks (-1)^{z1.x2}
        c1 = (self.x & self.z).bit_count()
        c2 = (other.x & other.z).bit_count()
        c3 = (x3 & z3).bit_count()
        swaps = (self.z & other.x).bit_count()
        k = (self.phase_pow + other.phase_pow + c1 + c2 - c3 + 2 * swaps) % 4
        return PauliWord(self.n, x3, z3, k)

    def conjugate_clifford(self, name: str, qubits: tuple[int, ...]) -> "PauliWord":
        """Return ``U^dag self U`` for a named Clifford gate.

        This is the backward-propagation direction: applying it gate by
        gate from the last gate to the first carries an observable to the
        input side of the circuit.
        """
        name = name.upper()
        sign = 1
        x, z = self.x, self.z
        if name in _TABLEAU_1Q:
            (q,) = qubits
            lq = _BITS_LETTER[((x >> q) & 1, (z >> q) & 1)]
            m, s = _TABLEAU_1Q[name][lq]
            sign *= s
            bx, bz = _LETTER_BITS[m]
            x = (x & ~(1 << q)) | (bx << q)
            z = (z & ~(1 << q)) | (bz << q)
        elif name == "SWAP":
            a, b = qubits
            xa, za = (x >> a) & 1, (z >> a) & 1
            xb, zb = (x >> b) & 1, (z >> b) & 1
            x = (x & ~(1 << a) & ~(1 << b)) | (xb << a) | (xa << b)
            z = (z & ~(1 << a) & ~(1 << b)) | (zb << a) | (za << b)
        elif name in ("CNOT", "CZ"):
            a, b = qubits
            table = _CNOT_TABLEAU if name == "CNOT" else _CZ_TABLEAU
            la = _BITS_LETTER[((x >> a) & 1, (z >> a) & 1)]
            lb = _BITS_LETTER[((x >> b) & 1, (z >> b) & 1)]
            ma, mb, s = table[(la, lb)]
            sign *= s
            ax, az = _LETTER_BITS[ma]
            bx, bz = _LETTER_BITS[mb]
            x = (x & ~(1 << a) & ~(1 << b)) | (ax << a) | (bx << b)
            z = (z & ~(1 << a) & ~(1 << b)) | (az << a) | (bz << b)
        else:
            raise PauliError(f"unknown Clifford gate {name!r}")
        if sign == 1:
            k = self.phase_pow
        elif sign == -1:
            k = (self.phase_pow + 2) % 4
        else:  # defensive: tables only produce +-1
            raise PauliError("non-real sign in Clifford tableau")
        return PauliWord(self.n, x, z, k)

    def conjugate_rotation_discrete(self, generator: "PauliWord", k: int) -> "PauliWord":
        """Heisenberg image ``R^dag self R`` for ``R = exp(-i k pi/4 generator * 2)``.

        ``k`` counts quarter turns (angle ``k * pi/2``). When ``self``
        commutes with the generator the word is returned unchanged; when it
        anticommutes the image is a single signed word per the backward map
        ``cos(theta) s - i sin(theta) s@P``.
        """
        k %= 4
        if k == 0 or self.commutes(generator):
            return self
        if k == 2:
            return PauliWord(self.n, self.x, self.z, (self.phase_pow + 2) % 4)
        prod = self.multiply(generator)
        shift = 3 if k == 1 else 1  # -i = i^3 at +pi/2, +i at 3pi/2
        return PauliWord(prod.n, prod.x, prod.z, (prod.phase_pow + shift) % 4)

    def restricted_to(self, mask: int) -> "PauliWord":
        """The word with all letters outside ``mask`` replaced by I."""
        return PauliWord(self.n, self.x & mask, self.z & mask, self.phase_pow)

    def __str__(self) -> str:
        pre = {0: "", 1: "i*", 2: "-", 3: "-i*"}[self.phase_pow % 4]
        return pre + self.to_text()
