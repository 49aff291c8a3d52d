import os, sys
sys.path.append(os.path.abspath(os.path.dirname(__file__)))
import pytest

sys.exit(pytest.main([os.path.join(os.path.dirname(os.path.abspath(__file__)), 'tests')] + sys.argv[1:]))
