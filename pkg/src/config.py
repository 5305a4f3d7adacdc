#!/usr/bin/env python3
"""
Configuration module for the debiased ATE application
Centralizes all environment variable loading and configuration management
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Runtime Configuration
THREADS = int(os.getenv('DEBIAS_ATE_THREADS', str(os.cpu_count() or 1)))
LOG_LEVEL = os.getenv('DEBIAS_ATE_LOG_LEVEL', 'INFO').upper()
OUT_DIR = os.getenv('DEBIAS_ATE_OUT_DIR', 'results')
SEED = int(os.getenv('DEBIAS_ATE_SEED', '0'))

# Posterior Sampling Configuration
DRAWS = int(os.getenv('DEBIAS_ATE_DRAWS', '2000'))
ALPHA = float(os.getenv('DEBIAS_ATE_ALPHA', '0.05'))

# Propensity Score Configuration
TRUNC_LO = float(os.getenv('DEBIAS_ATE_TRUNC_LO', '0.1'))
TRUNC_HI = float(os.getenv('DEBIAS_ATE_TRUNC_HI', '0.9'))
PS_RIDGE = float(os.getenv('DEBIAS_ATE_PS_RIDGE', '1e-4'))
PS_MAX_ITER = int(os.getenv('DEBIAS_ATE_PS_MAX_ITER', '100'))
PS_TOL = float(os.getenv('DEBIAS_ATE_PS_TOL', '1e-8'))

# GP Hyperparameter Optimization Configuration
RESTARTS = int(os.getenv('DEBIAS_ATE_RESTARTS', '3'))
OPT_MAX_ITER = int(os.getenv('DEBIAS_ATE_OPT_MAX_ITER', '200'))

# Benchmark Configuration
REPS = int(os.getenv('DEBIAS_ATE_REPS', '50'))
FAILURE_LIMIT = float(os.getenv('DEBIAS_ATE_FAILURE_LIMIT', '0.2'))

# Configuration validation
def validate_config():
    """Validate that configuration values are usable"""
    checks = {
        'DEBIAS_ATE_THREADS': THREADS >= 1,
        'DEBIAS_ATE_DRAWS': DRAWS >= 2,
        'DEBIAS_ATE_ALPHA': 0.0 < ALPHA < 1.0,
        'DEBIAS_ATE_TRUNC_LO': 0.0 < TRUNC_LO < 0.5,
        'DEBIAS_ATE_TRUNC_HI': 0.5 < TRUNC_HI < 1.0,
        'DEBIAS_ATE_PS_RIDGE': PS_RIDGE >= 0.0,
        'DEBIAS_ATE_PS_MAX_ITER': PS_MAX_ITER >= 1,
        'DEBIAS_ATE_PS_TOL': PS_TOL > 0.0,
        'DEBIAS_ATE_RESTARTS': RESTARTS >= 1,
        'DEBIAS_ATE_OPT_MAX_ITER': OPT_MAX_ITER >= 1,
        'DEBIAS_ATE_REPS': REPS >= 1,
        'DEBIAS_ATE_FAILURE_LIMIT': 0.0 <= FAILURE_LIMIT <= 1.0,
        'DEBIAS_ATE_LOG_LEVEL': LOG_LEVEL in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'),
    }

    invalid_configs = [key for key, ok in checks.items() if not ok]
    if invalid_configs:
        raise ValueError(f"Invalid configuration: {', '.join(invalid_configs)}")

    return True

# Validate configuration on import
validate_config()
