# db/models.py
"""
Containers are plain directories; no database engine is involved.

Dataset directory:
- manifest.txt   key=value lines: pde, n, grid, seed, plus every grf.* and
                 burgers.* / ns.* setting used to generate it
- inputs.ntns    float64 (N, s_1, ..., s_d, 1): forcing (ns) or initial condition (burgers)
- outputs.ntns   float64 (N, s_1, ..., s_d, 1): final state

Checkpoint directory:
- manifest.txt   key=value lines: form, ranks, alpha, n, L, C, model.* fields,
                 mg_levels, mg_padding, grid_exponent, mg_regions
- <param>.ntns   one record per learnable array, file name = parameter name
                 (e.g. lift.W.ntns, block0.Q.ntns, spectral.core.ntns)
- spectral.lambda.ntns   CP weights only (fixed, not a parameter)

NTNS record (little-endian):
- magic b"NTNS" | u32 version | u8 dtype (0 = f64, 1 = c128) | u8 ndim
- ndim × u64 extents
- row-major payload
"""

MANIFEST_FILE = "manifest.txt"
INPUTS_FILE = "inputs.ntns"
OUTPUTS_FILE = "outputs.ntns"
RECORD_SUFFIX = ".ntns"

RECORD_MAGIC = b"NTNS"
RECORD_VERSION = 1
DTYPE_CODES = {"float64": 0, "complex128": 1}
