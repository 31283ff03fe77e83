from .rules import DEFAULT_RULES, GamingRule, detect_gaming, monthly_gaming, parse_rules  # noqa: F401
from .tendency import TendencyModel, estimate_tendency  # noqa: F401
