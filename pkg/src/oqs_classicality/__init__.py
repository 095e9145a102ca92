"""Classicality audits for open quantum systems with an explicit environment."""

from .channels import LindbladSpec, Superoperator
from .classicality import (
    AuditReport,
    ClassicalityFit,
    disco_constraint_check,
    fit_unitary_depolarizing,
    fixed_basis_classicality,
    rate_witness,
    superclassicality_scan,
    zero_discord_check,
)
from .models import (
    ConditionalEnvStates,
    ModelInstance,
    build_disco_general,
    build_superclassical_general,
    extract_conditional_env_states,
    make_model,
    model_condisco4,
    model_decay_dnull,
    model_general2,
    model_general4,
    model_unitary_exchange,
)
from .protocol import (
    JointTable,
    MeasurementSpec,
    basis_from_angles,
    branch_map_oracle,
    cpf_correlation,
    dni_basis,
    dni_distance,
    three_point_protocol,
)

__version__ = "0.1.0"
