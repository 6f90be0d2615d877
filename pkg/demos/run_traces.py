"""Running the interpreter and reading event traces.

A terminating program denotes a single finite trace: an alternating
sequence of states and event markers.  Calls and returns leave four
kinds of markers behind (callEv, pushEv, retEv, popEv), each sitting
between two copies of the same state.
"""

from tracelet.interp import run
from tracelet.lang import parse_program
from tracelet.traces import dump_trace, is_adequate

SOURCE = """
// the identity function, computed by k recursive calls
m(k) {
  r;
  if (k != 0) { r = m(k - 1); r = r + 1 };
  return r
}

main { x; x = m(1) }
"""

program = parse_program(SOURCE)
trace = run(program)

print("=== trace of x = m(1), entry by entry ===")
for entry in trace.entries:
    print(f"  {entry!r}")

print(f"\nfinal state: {trace.last()!r}")
print(f"entries: {len(trace.entries)}")

# Every interpreter trace is adequate: one variable changes per state
# step, call identifiers are fresh, every callEv is chased by its
# pushEv and every retEv by its popEv in the matching context.
print(f"adequate (strict):  {bool(is_adequate(trace, strict=True))}")
print(f"adequate (lenient): {bool(is_adequate(trace, strict=False))}")

print("\n=== the same trace as .trace.json ===")
print(dump_trace(trace))
