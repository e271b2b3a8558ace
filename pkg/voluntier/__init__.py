from dotenv import load_dotenv

# Pick up VOLUNTIER_* / LOGGER_SERVICE_URL overrides from a local .env
load_dotenv()

__version__ = "0.3.0"
