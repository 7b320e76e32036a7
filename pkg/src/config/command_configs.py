"""
CLI Command Configurations - Centralized Configuration
Mục đích: Configuration-driven command creation; adding a subcommand is adding an entry

Each entry: name, description, service ("pipeline" | "sweep"), service_method,
operation_name, arguments (argparse specs), required, arg_mapping (service kwarg -> argument).
"""

from typing import Any, Dict, List


# =================== SHARED ARGUMENT GROUPS ===================

SCENARIO_ARGUMENTS: List[Dict[str, Any]] = [
    {"flags": ["--case"], "dest": "case", "help": "Case file (.m MATPOWER text or canonical .json)"},
    {"flags": ["--areas"], "dest": "areas", "help": "Partition JSON {\"areas\": {bus: area}}"},
    {"flags": ["--scenario"], "dest": "scenario", "help": "ExperimentConfig JSON; flags override it"},
    {"flags": ["--seed"], "dest": "seed", "type": "int", "help": "Master seed for noise and bad data"},
    {"flags": ["--plan"], "dest": "plan", "choices": ["full", "full_both_ends", "flows_only"],
     "help": "Measurement plan"},
    {"flags": ["--pmu-buses"], "dest": "pmu_buses", "type": "int_list", "help": "Comma-separated PMU buses"},
    {"flags": ["--noise-power"], "dest": "noise_power", "type": "float", "help": "Power meter sigma (p.u.)"},
    {"flags": ["--noise-vmag"], "dest": "noise_vmag", "type": "float", "help": "Voltage meter sigma (p.u.)"},
    {"flags": ["--noise-angle"], "dest": "noise_angle", "type": "float", "help": "PMU angle sigma (rad)"},
    {"flags": ["--bad-fraction"], "dest": "bad_fraction", "type": "float", "group": "bad_data",
     "help": "Fraction of meters to corrupt"},
    {"flags": ["--bad-targets"], "dest": "bad_targets", "type": "str_list", "group": "bad_data",
     "help": "Comma-separated labels, e.g. p_injection:5,v_squared:14,p_flow:5-6"},
    {"flags": ["--strict-zero-injection"], "dest": "strict_zero_injection", "action": "store_true",
     "help": "Force zero-injection targets to exactly 0"},
]

ESTIMATOR_ARGUMENTS: List[Dict[str, Any]] = [
    {"flags": ["--lambda"], "dest": "lambda_", "type": "float", "help": "Outlier penalty (default 1.34)"},
    {"flags": ["--rho-f"], "dest": "rho_f", "type": "float", "help": "Stage-1 penalty (default 1.0)"},
    {"flags": ["--rho-s"], "dest": "rho_s", "type": "float", "help": "Stage-2 penalty (default 0.1)"},
    {"flags": ["--epsilon"], "dest": "epsilon", "type": "float", "help": "Residual tolerance (default 5e-4)"},
    {"flags": ["--max-iter"], "dest": "max_iter", "type": "int", "help": "ADMM iteration cap per stage"},
    {"flags": ["--augmentation"], "dest": "augmentation", "choices": ["tie_lines", "identity"],
     "help": "Gain augmentation: consensus slots only, or full identity"},
    {"flags": ["--boundary-rule"], "dest": "boundary_rule", "choices": ["owned", "touched"],
     "help": "Which tie-line far ends an area copies in stage 2"},
    {"flags": ["--threshold-mode"], "dest": "threshold_mode", "choices": ["sigma", "absolute"],
     "help": "Soft threshold lambda*sigma per row, or lambda on raw residuals"},
    {"flags": ["--schedule-seed"], "dest": "schedule_seed", "type": "int",
     "help": "Shuffle the per-round area launch order"},
    {"flags": ["--force"], "dest": "force", "action": "store_true",
     "help": "Run later stages even if an earlier stage did not converge"},
]

OUTPUT_ARGUMENTS: List[Dict[str, Any]] = [
    {"flags": ["--out"], "dest": "out", "help": "Output directory"},
    {"flags": ["--timing"], "dest": "timing", "action": "store_true", "help": "Write wall time into the report"},
    {"flags": ["--measurements"], "dest": "measurements", "help": "Use a generated measurements JSON"},
]


# =================== COMMAND CONFIGURATIONS ===================

CLI_COMMAND_CONFIGS: Dict[str, Dict[str, Any]] = {
    "estimate": {
        "name": "estimate",
        "description": "Run D-RBSE on one scenario; writes report.json and trace CSVs",
        "service": "pipeline",
        "service_method": "estimate",
        "operation_name": "chạy D-RBSE",
        "arguments": SCENARIO_ARGUMENTS + ESTIMATOR_ARGUMENTS + OUTPUT_ARGUMENTS,
        "required": ["case"],
        "builds_config": True,
        "arg_mapping": {"out_dir": "out", "timing": "timing", "measurements_path": "measurements"},
    },

    "generate": {
        "name": "generate",
        "description": "Materialize a measurement scenario as JSON",
        "service": "pipeline",
        "service_method": "generate",
        "operation_name": "tạo measurement scenario",
        "arguments": SCENARIO_ARGUMENTS + [
            {"flags": ["--out"], "dest": "out", "help": "Output file (default measurements.json)"},
        ],
        "required": ["case"],
        "builds_config": True,
        "defaults": {"out": "measurements.json"},
        "arg_mapping": {"out_path": "out"},
    },

    "sweep": {
        "name": "sweep",
        "description": "Bad-data sweep of D-RBSE, WLS and WLS+LNRT; writes sweep.csv and sweep_trials.csv",
        "service": "sweep",
        "service_method": "sweep_to_disk",
        "operation_name": "chạy bad-data sweep",
        "arguments": SCENARIO_ARGUMENTS + ESTIMATOR_ARGUMENTS + [
            {"flags": ["--fractions"], "dest": "fractions", "type": "float_list",
             "help": "Comma-separated bad-data fractions"},
            {"flags": ["--trials"], "dest": "trials", "type": "int", "help": "Trials per fraction"},
            {"flags": ["--seeds"], "dest": "seeds", "type": "int_list", "help": "Master seed per trial"},
            {"flags": ["--out"], "dest": "out", "help": "Output directory"},
        ],
        "required": ["case"],
        "builds_config": True,
        "defaults": {"fractions": [0.0, 0.01, 0.02, 0.03, 0.04, 0.05], "trials": 20},
        "arg_mapping": {"fractions": "fractions", "trials": "trials", "out_dir": "out"},
    },

    "compare": {
        "name": "compare",
        "description": "D-RBSE next to centralized RBSE, WLS and WLS+LNRT on one scenario",
        "service": "pipeline",
        "service_method": "compare_to_disk",
        "operation_name": "so sánh estimators",
        "arguments": SCENARIO_ARGUMENTS + ESTIMATOR_ARGUMENTS + OUTPUT_ARGUMENTS,
        "required": ["case"],
        "builds_config": True,
        "arg_mapping": {"out_dir": "out", "timing": "timing", "measurements_path": "measurements"},
    },

    "convert-case": {
        "name": "convert-case",
        "description": "Parse MATPOWER case text into the canonical JSON case",
        "service": "pipeline",
        "service_method": "convert_case",
        "operation_name": "chuyển đổi case file",
        "arguments": [
            {"flags": ["case_path"], "help": "MATPOWER .m file"},
            {"flags": ["--out"], "dest": "out", "help": "Output JSON (default: input with .json suffix)"},
            {"flags": ["--area-column"], "dest": "area_column", "choices": ["area", "zone"],
             "help": "Copy this bus column into the JSON areas map"},
        ],
        "required": ["case_path"],
        "builds_config": False,
        "arg_mapping": {"case_path": "case_path", "out_path": "out", "area_column": "area_column"},
    },

    "fetch-case": {
        "name": "fetch-case",
        "description": "Download a MATPOWER case (e.g. case118) into data/cases",
        "service": "pipeline",
        "service_method": "fetch_case",
        "operation_name": "tải case file",
        "arguments": [
            {"flags": ["name"], "help": "MATPOWER case name, e.g. case118"},
            {"flags": ["--dest"], "dest": "dest", "help": "Target directory (default data/cases)"},
            {"flags": ["--url"], "dest": "url", "help": "Override the download URL"},
        ],
        "required": ["name"],
        "builds_config": False,
        "arg_mapping": {"name": "name", "dest_dir": "dest", "url": "url"},
    },
}
