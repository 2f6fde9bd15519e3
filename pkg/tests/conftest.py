import sys
from pathlib import Path

# let acceptance tests reuse helpers from sibling test modules
sys.path.insert(0, str(Path(__file__).parent))
