"""Generate the ~50-node bench network shipped in hydrosoc/data/networks."""
import math

N = 7
SPACING = 200.0
COM = {(r, c) for r in range(2, 5) for c in range(2, 5)}
IND = {(6, 0), (6, 1), (0, 6)}

RES_PAT = [0.45, 0.40, 0.38, 0.38, 0.45, 0.70, 1.30, 1.75, 1.55, 1.20, 1.00, 0.95,
           1.00, 0.95, 0.90, 0.95, 1.10, 1.40, 1.70, 1.60, 1.30, 1.00, 0.75, 0.55]
COM_PAT = [0.05, 0.05, 0.05, 0.05, 0.05, 0.10, 0.30, 0.80, 1.40, 1.70, 1.80, 1.80,
           1.70, 1.80, 1.80, 1.70, 1.40, 0.90, 0.50, 0.30, 0.15, 0.10, 0.05, 0.05]
IND_PAT = [1.0] * 24


def jid(r, c):
    return f"J{r}{c}"


def main(path):
    out = ["[TITLE]", "bench50: 7x7 grid, west and east plants, one tank", ""]
    out += ["[JUNCTIONS]", ";ID  Elev  Demand  Pattern"]
    for r in range(N):
        for c in range(N):
            elev = 10.0 + 1.5 * r + 0.5 * c
            if (r, c) in COM:
                dem, pat = 0.9, "COM"
            elif (r, c) in IND:
                dem, pat = 0.7, "IND"
            else:
                dem, pat = round(0.35 + 0.05 * ((r * 7 + c) % 5), 2), "RES"
            out.append(f" {jid(r, c)}  {elev:.1f}  {dem}  {pat}")
    out.append(" EP  12.0  0  ")
    out += ["", "[RESERVOIRS]", ";ID  Head", " WTP_W  58.0", " WTP_E  20.0"]
    out += ["", "[TANKS]", ";ID  Elev  InitLvl  MinLvl  MaxLvl  Diam  MinVol",
            " T1  42.0  14.0  2.0  18.0  14.0  0"]
    out += ["", "[PIPES]", ";ID  Node1  Node2  Length  Diam  Rough  MinorLoss  Status"]
    k = 0
    for r in range(N):
        for c in range(N - 1):
            k += 1
            d = 300 if r == 3 else 150
            out.append(f" P{k}  {jid(r, c)}  {jid(r, c + 1)}  {SPACING:.0f}  {d}  110  0  Open")
    for c in range(N):
        for r in range(N - 1):
            k += 1
            d = 300 if c == 3 else 150
            out.append(f" P{k}  {jid(r, c)}  {jid(r + 1, c)}  {SPACING:.0f}  {d}  110  0  Open")
    out.append(f" MW  WTP_W  {jid(3, 0)}  800  400  120  0  Open")
    out.append(f" ME  EP  {jid(3, 6)}  600  300  120  0  Open")
    out.append(f" PT  T1  {jid(0, 3)}  400  250  120  0  Open")
    out += ["", "[PUMPS]", ";ID  Node1  Node2  Parameters", " PU1  WTP_E  EP  HEAD C1"]
    out += ["", "[CURVES]", ";ID  Flow  Head", " C1  4  30"]
    out += ["", "[PATTERNS]"]
    for name, pat in (("RES", RES_PAT), ("COM", COM_PAT), ("IND", IND_PAT)):
        for i in range(0, 24, 12):
            out.append(f" {name}  " + "  ".join(f"{v:.2f}" for v in pat[i:i + 12]))
    out += ["", "[TIMES]", " Duration  192:00", " Hydraulic Timestep  1:00",
            " Quality Timestep  0:05", " Pattern Timestep  1:00"]
    out += ["", "[OPTIONS]", " Units  LPS", " Headloss  H-W"]
    out += ["", "[COORDINATES]", ";Node  X  Y"]
    for r in range(N):
        for c in range(N):
            out.append(f" {jid(r, c)}  {c * SPACING:.1f}  {(N - 1 - r) * SPACING:.1f}")
    out.append(f" EP  {(N - 1) * SPACING + 300:.1f}  {3 * SPACING:.1f}")
    out.append(f" WTP_W  {-800:.1f}  {3 * SPACING:.1f}")
    out.append(f" WTP_E  {(N - 1) * SPACING + 900:.1f}  {3 * SPACING:.1f}")
    out.append(f" T1  {3 * SPACING:.1f}  {(N - 1) * SPACING + 400:.1f}")
    out += ["", "[END]", ""]
    with open(path, "w") as fh:
        fh.write("\n".join(out))


if __name__ == "__main__":
    import sys
    main(sys.argv[1])
