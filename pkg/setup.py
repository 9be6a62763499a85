#!/usr/bin/env python3
"""
Setup script for Graph of Thoughts Runner
Checks the environment, installs dependencies and writes default configuration
"""

import importlib
import os
import subprocess
import sys

REQUIRED_MODULES = {
    'requests': 'requests',
    'tenacity': 'tenacity',
    'networkx': 'networkx',
    'dotenv': 'python-dotenv',
    'pytest': 'pytest',
}


def check_python_version():
    """Check Python version compatibility"""
    if sys.version_info < (3, 8):
        print("Error: Python 3.8 or higher is required")
        print(f"Current version: {sys.version}")
        return False
    print(f"✓ Python {sys.version_info.major}.{sys.version_info.minor} detected")
    return True


def missing_dependencies():
    missing = []
    for module, package in REQUIRED_MODULES.items():
        try:
            importlib.import_module(module)
            print(f"✓ {package} is available")
        except ImportError:
            print(f"✗ {package} is not available")
            missing.append(package)
    return missing


def install_dependencies():
    """Install everything listed in requirements.txt"""
    try:
        subprocess.run([sys.executable, '-m', 'pip', 'install', '-r', 'requirements.txt'],
                       check=True)
        print("✓ Dependencies installed")
        return True
    except subprocess.CalledProcessError:
        print("✗ Failed to install dependencies")
        return False


def create_config_file():
    """Write the default configuration to config.json unless one exists"""
    if os.path.exists('config.json'):
        print("config.json already exists, leaving it untouched")
        return
    from config import save_config_to_file
    if save_config_to_file('config.json'):
        print("✓ Default configuration file created")


def create_env_template():
    """Write a .env template for the HTTP backend credentials"""
    from config import CONFIG
    if os.path.exists('.env'):
        return
    with open('.env', 'w', encoding='utf-8') as f:
        f.write(f"{CONFIG['api_key_env']}=\n{CONFIG['organization_env']}=\n")
    print(f"✓ .env template created; fill in {CONFIG['api_key_env']} to use --backend http")


def main():
    """Main setup function"""
    print("=== Graph of Thoughts Runner Setup ===")
    print()

    print("Checking requirements...")
    if not check_python_version():
        print("\nSetup failed due to missing requirements")
        return

    missing = missing_dependencies()
    if missing:
        response = input(f"\nInstall missing dependencies ({', '.join(missing)})? (y/n): ").lower().strip()
        if response not in ['y', 'yes'] or not install_dependencies():
            print("\nSetup failed due to missing requirements")
            return

    print("\nCreating configuration...")
    create_config_file()
    create_env_template()

    print("\n=== Setup Complete ===")
    print("\nTo run the runner:")
    print("  python main.py run --scheme got --usecase sorting --size 32 --samples 10")
    print("  python main.py topology --shape table")
    print("\nTo run the tests: pytest (add -m 'not slow' to skip the long experiments)")


if __name__ == "__main__":
    main()
