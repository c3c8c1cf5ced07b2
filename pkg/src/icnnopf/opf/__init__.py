from .ac import arcs, branch_power_flows, build_ac
from .check import objective_value, residuals
from .dc import FLOW_SIGN, DcOpfProblem, DcValue, build_dc, dc_flow_coefficient, dc_formulation, value_and_gradient
from .formulation import (
    FORMULATIONS,
    SCHEMA_VERSION,
    Constraint,
    Formulation,
    VariableBlock,
    dumps_formulation,
    export_formulation,
    load_formulation,
    loads_formulation,
)
from .soc import BranchCoefficients, FlowCoefficients, admittance_coefficients, build_soc, soc_branch_coefficients

__all__ = [
    "FLOW_SIGN",
    "FORMULATIONS",
    "SCHEMA_VERSION",
    "BranchCoefficients",
    "Constraint",
    "DcOpfProblem",
    "DcValue",
    "FlowCoefficients",
    "Formulation",
    "VariableBlock",
    "admittance_coefficients",
    "arcs",
    "branch_power_flows",
    "build_ac",
    "build_dc",
    "build_soc",
    "dc_flow_coefficient",
    "dc_formulation",
    "dumps_formulation",
    "export_formulation",
    "load_formulation",
    "loads_formulation",
    "objective_value",
    "residuals",
    "soc_branch_coefficients",
    "value_and_gradient",
]
