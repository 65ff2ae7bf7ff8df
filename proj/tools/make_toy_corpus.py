#!/usr/bin/env python3
"""Write data/toy_pairs.tsv, a small labelled TCR/peptide pair table.

Each epitope has a short CDR3b motif; binders usually carry their epitope's
motif, non-binders usually do not. Output is deterministic.
"""

import random
import sys

AA = "ACDEFGHIKLMNPQRSTVWY"
FILL = "ADEGKLNQRSTV"
N_EPITOPES = 10
N_PAIRS = 800
POSITIVE_RATE = 0.2


def residues(rng, n, alphabet=AA):
    return "".join(rng.choice(alphabet) for _ in range(n))


def main(path):
    rng = random.Random(7)
    peptides = [residues(rng, 9) for _ in range(N_EPITOPES)]
    motifs = [residues(rng, 3, "CFHIMPWY") for _ in range(N_EPITOPES)]
    with open(path, "w", newline="\n") as out:
        out.write("id\tcdr3a\tcdr3b\tpeptide\tepitope\tlabel\n")
        for i in range(N_PAIRS):
            ep = rng.randrange(N_EPITOPES)
            label = 1 if rng.random() < POSITIVE_RATE else 0
            core = residues(rng, rng.randint(5, 8), FILL)
            carries = rng.random() < (0.85 if label else 0.05)
            if carries:
                at = rng.randrange(len(core) + 1)
                core = core[:at] + motifs[ep] + core[at:]
            cdr3a = "CA" + residues(rng, rng.randint(6, 9), FILL) + "F"
            out.write(f"pair{i + 1}\t{cdr3a}\tCASS{core}F\t{peptides[ep]}\tEP{ep + 1}\t{label}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/toy_pairs.tsv")
