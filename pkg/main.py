import sys
from typing import List, Optional

import click

from core.exceptions import ConfigError, PSLossError
from routers.endpoints import router
from utils.encoders import dumps
from utils.log import setup_logger
from utils.response import fail_response

logger = setup_logger(__name__)


def run(args: Optional[List[str]] = None) -> int:
    """Run one CLI command; errors become a fail envelope and a non-zero exit code."""
    try:
        router.main(args=args, prog_name="psloss", standalone_mode=False)
        return 0
    # Exception handler for toolkit errors
    except PSLossError as exc:
        logger.danger(f"{type(exc).__name__}: {exc.message}")
        click.echo(dumps(fail_response(exc.message, data=exc.details or None)))
        return exc.exit_code
    # Exception handler for bad command lines
    except click.UsageError as exc:
        click.echo(dumps(fail_response(exc.format_message())))
        return ConfigError.exit_code
    except click.ClickException as exc:
        click.echo(dumps(fail_response(exc.format_message())))
        return exc.exit_code
    except click.Abort:
        logger.warn_custom("Aborted")
        return 1


if __name__ == "__main__":
    sys.exit(run())
