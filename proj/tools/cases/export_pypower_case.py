#!/usr/bin/env python3
"""Export a PYPOWER/MATPOWER case into the plain-text fedgrid case format.

Transformer taps and phase shifters are dropped first (the fedgrid network
model has none) and the case is re-solved. Generators are then folded into
net bus loads at that solved operating point (load = Pd - Pg, Qd - Qg), so
every non-slack bus becomes a PQ bus whose power-flow solution reproduces it.
"""
import argparse
import importlib
import sys

from pypower.api import ppoption, runpf
from pypower.idx_brch import BR_B, BR_R, BR_X, F_BUS, T_BUS, BR_STATUS, TAP, SHIFT
from pypower.idx_bus import BS, BUS_I, BUS_TYPE, GS, PD, QD, VM, REF
from pypower.idx_gen import GEN_BUS, PG, QG, GEN_STATUS


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("case", help="pypower case module, e.g. case14")
    parser.add_argument("output")
    args = parser.parse_args()

    ppc = getattr(importlib.import_module(f"pypower.{args.case}"), args.case)()
    # Solve the network the way fedgrid models it: no taps, no phase shift.
    ppc["branch"][:, TAP] = 0.0
    ppc["branch"][:, SHIFT] = 0.0
    result, success = runpf(ppc, ppoption(VERBOSE=0, OUT_ALL=0))
    if not success:
        print("power flow did not converge", file=sys.stderr)
        return 1

    bus = result["bus"]
    gen = result["gen"]
    net_p = {int(b[BUS_I]): b[PD] for b in bus}
    net_q = {int(b[BUS_I]): b[QD] for b in bus}
    for g in gen:
        if g[GEN_STATUS] > 0:
            net_p[int(g[GEN_BUS])] -= g[PG]
            net_q[int(g[GEN_BUS])] -= g[QG]

    slack = [b for b in bus if int(b[BUS_TYPE]) == REF]
    if len(slack) != 1:
        print("expected exactly one reference bus", file=sys.stderr)
        return 1

    with open(args.output, "w") as out:
        out.write(f"# {args.case}: exported from PYPOWER, generators folded into net load\n")
        out.write(f"# at the tapless solved AC operating point.\n")
        out.write(f"BASE_MVA {result['baseMVA']:g}\n")
        out.write(f"SLACK {int(slack[0][BUS_I])} {slack[0][VM]:.6f}\n")
        out.write("BUS\n")
        out.write("# index load_p_MW load_q_MVAr shunt_g_MW shunt_b_MVAr\n")
        for b in bus:
            i = int(b[BUS_I])
            out.write(f"{i} {net_p[i]:.6f} {net_q[i]:.6f} {b[GS]:g} {b[BS]:g}\n")
        out.write("BRANCH\n")
        out.write("# from to r x b_charging\n")
        for br in result["branch"]:
            if br[BR_STATUS] <= 0:
                continue
            out.write(f"{int(br[F_BUS])} {int(br[T_BUS])} {br[BR_R]:.6g} {br[BR_X]:.6g} {br[BR_B]:.6g}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
