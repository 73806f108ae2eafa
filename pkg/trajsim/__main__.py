"""Allow running trajsim as a module: python -m trajsim"""

from trajsim.cli import main

if __name__ == "__main__":
    main()
