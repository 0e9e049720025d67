from moledit.cli import main
import sys
sys.exit(main())
