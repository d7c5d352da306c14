import os
import sys

# Add the project directory to the Python path
path = os.path.dirname(os.path.abspath(__file__))
if path not in sys.path:
    sys.path.append(path)

# Set environment defaults (CFR_DATA_DIR may point at corrected data files)
os.environ.setdefault("CFR_LOG_LEVEL", "INFO")

# Import the FastAPI app
from cfr_mediation.main import app

# This is the ASGI application
application = app
