#!/usr/bin/env python3
"""
Test script for the WavRes low-dose CT toolkit
This script checks the installation without needing any data or checkpoints
"""

import importlib
import os
import sys
from pathlib import Path

REQUIRED = [
    ("numpy", "numpy"),
    ("scipy", "scipy"),
    ("pandas", "pandas"),
    ("skimage", "scikit-image"),
    ("dotenv", "python-dotenv"),
    ("tqdm", "tqdm"),
    ("colorama", "colorama"),
    ("pytest", "pytest"),
]


def check_dependencies():
    """Check if all required dependencies are installed"""
    print("🔍 Checking dependencies...")

    missing_deps = []
    for module, package in REQUIRED:
        try:
            importlib.import_module(module)
            print(f"✅ {package}")
        except ImportError:
            missing_deps.append(package)
            print(f"❌ {package}")

    if missing_deps:
        print(f"\n❌ Missing dependencies: {', '.join(missing_deps)}")
        print("Please activate the conda environment: conda activate wavres")
        return False

    print("\n✅ All dependencies installed!")
    return True


def check_environment():
    """Check environment variables and the config they point to"""
    print("\n🔍 Checking configuration...")

    from dotenv import load_dotenv
    load_dotenv()

    from wavres.config import load_config
    from wavres.errors import ConfigError

    config_path = os.getenv("WAVRES_CONFIG")
    if not config_path:
        print("⚠️  WAVRES_CONFIG not set, built-in defaults apply")
    try:
        config = load_config(config_path)
        training = config.training()
        print(f"✅ Config OK: {config.get_int('sim.image_size')}x{config.get_int('sim.image_size')} slices, "
              f"{training.decomposition.n_bands} bands, {training.topology.channels} channels")
        return True
    except ConfigError as e:
        print(f"❌ Config error: {e}")
        return False


def check_filter_bank():
    """Perfect reconstruction of the built-in filter bank"""
    print("\n🔍 Checking contourlet filter bank...")

    from wavres.filters import default_filter_bank

    bank = default_filter_bank()
    error = bank.reconstruction_error()
    if error < 1e-10:
        print(f"✅ Perfect reconstruction (error {error:.1e}), checksum {bank.checksum[:12]}")
        return True
    print(f"❌ Filter bank reconstruction error {error:.1e}")
    return False


def check_sample_configs():
    print("\n🔍 Checking sample configs...")

    from wavres.config import load_config
    from wavres.errors import ConfigError

    ok = True
    for path in sorted(Path(__file__).resolve().parent.joinpath("configs").glob("*.cfg")):
        try:
            load_config(path).training()
            print(f"✅ {path.name}")
        except ConfigError as e:
            print(f"❌ {path.name}: {e}")
            ok = False
    return ok


def main():
    """Run all checks"""
    print("=" * 60)
    print("WavRes System Test")
    print("=" * 60)

    if not check_dependencies():
        print("\n❌ Install the missing packages before running further checks.")
        sys.exit(1)

    all_tests_passed = all([check_environment(), check_filter_bank(), check_sample_configs()])

    # Summary
    print("\n" + "=" * 60)
    if all_tests_passed:
        print("✅ All checks passed! System is ready to use.")
        print("\nTry the desk-scale pipeline with: ./run_test.sh")
    else:
        print("❌ Some checks failed. Please fix the issues above.")
    print("=" * 60)
    sys.exit(0 if all_tests_passed else 1)


if __name__ == "__main__":
    main()
